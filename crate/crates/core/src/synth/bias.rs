//! Content-independent appearance bias.
//!
//! Applies, in order: per-channel affine gain/offset, gamma, hue rotation
//! around the gray axis, radial vignette, additive Gaussian noise, clip to
//! `[0, 1]`. Masks and labels are untouched by construction.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::{ImageTensor, ValueRange};
use crate::nn::init::normal_sample;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainBias {
    pub channel_gain: [f64; 3],
    pub channel_offset: [f64; 3],
    pub gamma: f64,
    pub vignette_strength: f64,
    pub noise_sigma: f64,
    pub hue_rotation_deg: f64,
}

impl DomainBias {
    /// No-op bias.
    pub fn identity() -> Self {
        Self {
            channel_gain: [1.0; 3],
            channel_offset: [0.0; 3],
            gamma: 1.0,
            vignette_strength: 0.0,
            noise_sigma: 0.0,
            hue_rotation_deg: 0.0,
        }
    }

    /// Mild, warm reference-domain look.
    pub fn tar_preset() -> Self {
        Self {
            channel_gain: [1.04, 0.98, 0.94],
            channel_offset: [0.02, 0.0, -0.01],
            gamma: 0.95,
            vignette_strength: 0.05,
            noise_sigma: 0.008,
            hue_rotation_deg: 6.0,
        }
    }

    /// Strongly shifted look of a "new" acquisition site: cool cast, higher
    /// gamma, visible vignette and noise.
    pub fn new_preset() -> Self {
        Self {
            channel_gain: [0.82, 1.00, 1.15],
            channel_offset: [-0.01, 0.005, 0.03],
            gamma: 1.10,
            vignette_strength: 0.10,
            noise_sigma: 0.008,
            hue_rotation_deg: -25.0,
        }
    }
}

/// Rotation matrix about the gray axis (1,1,1)/√3 by `deg` degrees.
fn hue_matrix(deg: f64) -> [[f64; 3]; 3] {
    let theta = deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let third = 1.0 / 3.0;
    let inv_sqrt3 = 1.0 / 3f64.sqrt();
    let mut m = [[0.0; 3]; 3];
    // R = cosθ I + (1 - cosθ) aaᵀ + sinθ [a]×  with a = (1,1,1)/√3.
    let cross = [
        [0.0, -inv_sqrt3, inv_sqrt3],
        [inv_sqrt3, 0.0, -inv_sqrt3],
        [-inv_sqrt3, inv_sqrt3, 0.0],
    ];
    for i in 0..3 {
        for j in 0..3 {
            let ident = if i == j { 1.0 } else { 0.0 };
            m[i][j] = cos * ident + (1.0 - cos) * third + sin * cross[i][j];
        }
    }
    m
}

/// Applies `bias` to a unit-range image; noise is drawn from `rng`.
pub fn apply_domain_bias<F: Scalar>(
    img: &ImageTensor<F>,
    bias: &DomainBias,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor<F>> {
    let (h, w, c) = img.data().dim();
    let hue = hue_matrix(bias.hue_rotation_deg);
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let r_max = (cy * cy + cx * cx).sqrt();
    let mut out = ndarray::Array3::<F>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            let mut px = [0.0f64; 3];
            for ch in 0..c {
                let v = img.data()[[y, x, ch]].as_f64();
                let affine = v * bias.channel_gain[ch.min(2)] + bias.channel_offset[ch.min(2)];
                px[ch] = affine.max(0.0).powf(bias.gamma);
            }
            if c == 3 && bias.hue_rotation_deg != 0.0 {
                let rotated = [
                    hue[0][0] * px[0] + hue[0][1] * px[1] + hue[0][2] * px[2],
                    hue[1][0] * px[0] + hue[1][1] * px[1] + hue[1][2] * px[2],
                    hue[2][0] * px[0] + hue[2][1] * px[1] + hue[2][2] * px[2],
                ];
                px = rotated;
            }
            let r = (((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt() / r_max).powi(2);
            let vignette = 1.0 - bias.vignette_strength * r;
            for ch in 0..c {
                let mut v = px[ch] * vignette;
                if bias.noise_sigma > 0.0 {
                    v += bias.noise_sigma * normal_sample(rng);
                }
                out[[y, x, ch]] = F::of_f64(v.clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(out, ValueRange::Unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};

    fn random_img(seed: u64, lo: f64, hi: f64) -> ImageTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_simple_fn((16, 16, 3), || rng.gen_range(lo..hi));
        ImageTensor::new(data, ValueRange::Unit).unwrap()
    }

    #[test]
    fn identity_bias_is_identity() {
        let img = random_img(1, 0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = apply_domain_bias(&img, &DomainBias::identity(), &mut rng).unwrap();
        assert!(img.max_abs_diff(&out).unwrap() < 1e-12);
    }

    #[test]
    fn red_offset_shifts_mean_exactly_before_clipping() {
        // Pixels kept away from the clip boundary; gamma 1, no vignette,
        // noise or hue, so the arithmetic oracle is exact.
        let img = random_img(3, 0.1, 0.7);
        let bias = DomainBias {
            channel_offset: [0.2, 0.0, 0.0],
            ..DomainBias::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = apply_domain_bias(&img, &bias, &mut rng).unwrap();
        let before = img.channel_means();
        let after = out.channel_means();
        assert!((after[0] - before[0] - 0.2).abs() < 1e-12);
        assert!((after[1] - before[1]).abs() < 1e-12);
        assert!((after[2] - before[2]).abs() < 1e-12);
    }

    #[test]
    fn bias_output_stays_in_unit_range() {
        let img = random_img(5, 0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let out = apply_domain_bias(&img, &DomainBias::new_preset(), &mut rng).unwrap();
        for &v in out.data().iter() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn noise_is_seeded() {
        let img = random_img(7, 0.2, 0.8);
        let bias = DomainBias { noise_sigma: 0.05, ..DomainBias::identity() };
        let mut rng1 = ChaCha8Rng::seed_from_u64(8);
        let mut rng2 = ChaCha8Rng::seed_from_u64(8);
        let a = apply_domain_bias(&img, &bias, &mut rng1).unwrap();
        let b = apply_domain_bias(&img, &bias, &mut rng2).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn default_presets_separate_domains() {
        use crate::metrics::{extract_features, frechet_distance, DEFAULT_EXTRACTOR_ID};
        use crate::synth::{generate_phantom, Phantom, PhantomSpec};

        // Sample sizes large enough that the covariance-estimation floor of
        // the feature distance stays well below the domain separation.
        let spec = PhantomSpec { size: 64, seed: 31, ..PhantomSpec::default() };
        let n = 400u64;
        let mut tar = Vec::new();
        let mut new = Vec::new();
        for id in 0..n {
            let p: Phantom<f32> = generate_phantom(&spec, id).unwrap();
            let mut rng_t = ChaCha8Rng::seed_from_u64(10_000 + id);
            let mut rng_n = ChaCha8Rng::seed_from_u64(20_000 + id);
            tar.push(apply_domain_bias(&p.image, &DomainBias::tar_preset(), &mut rng_t).unwrap());
            new.push(apply_domain_bias(&p.image, &DomainBias::new_preset(), &mut rng_n).unwrap());
        }
        let f_tar = extract_features(&tar, DEFAULT_EXTRACTOR_ID).unwrap();
        let f_new = extract_features(&new, DEFAULT_EXTRACTOR_ID).unwrap();
        let across: f32 = frechet_distance(&f_new, &f_tar).unwrap();

        let (h1, h2) = tar.split_at(tar.len() / 2);
        let within: f32 = frechet_distance(
            &extract_features(h1, DEFAULT_EXTRACTOR_ID).unwrap(),
            &extract_features(h2, DEFAULT_EXTRACTOR_ID).unwrap(),
        )
        .unwrap();
        assert!(
            across > 5.0 * within,
            "across-domain distance {across} not > 5x within-domain {within}"
        );
    }

    #[test]
    fn hue_rotation_preserves_gray() {
        // The gray axis is the rotation axis, so achromatic pixels are fixed
        // points (up to rounding).
        let img = ImageTensor::<f64>::constant(8, 8, 3, 0.4, ValueRange::Unit).unwrap();
        let bias = DomainBias { hue_rotation_deg: 40.0, ..DomainBias::identity() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let out = apply_domain_bias(&img, &bias, &mut rng).unwrap();
        assert!(img.max_abs_diff(&out).unwrap() < 1e-9);
    }
}
