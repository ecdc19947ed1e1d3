//! SSIM, MS-SSIM and the structure-only similarity term.
//!
//! Local statistics are taken over a Gaussian window (default 11×11, σ 1.5)
//! at valid positions (no padding). Multi-channel images are scored per
//! channel and averaged.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, ValueRange};
use crate::scalar::Scalar;

/// Scale weights for 5-scale MS-SSIM.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SsimConfig {
    /// Window side; odd and >= 3.
    pub window: usize,
    /// Gaussian sigma of the window.
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` (1.0 for unit-range images).
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 1.0 }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if self.k1 <= 0.0 || self.k2 <= 0.0 {
            return Err(Error::Config("SSIM K1 and K2 must be positive".into()));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// C3 = C2 / 2, the stabilizer of the structure term.
    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }

    /// Normalized 1-D Gaussian window taps.
    pub fn window_taps(&self) -> Vec<f64> {
        let half = (self.window / 2) as isize;
        let mut taps: Vec<f64> = (-half..=half)
            .map(|i| (-((i * i) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        taps
    }
}

/// Per-window first and second moments of a channel pair at valid positions.
struct WindowStats {
    mu_x: Array2<f64>,
    mu_y: Array2<f64>,
    var_x: Array2<f64>,
    var_y: Array2<f64>,
    cov_xy: Array2<f64>,
}

/// Separable Gaussian filtering of a 2-D channel at valid positions.
fn filter_valid(chan: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = chan.dim();
    let k = taps.len();
    let oh = h - k + 1;
    let ow = w - k + 1;
    // Horizontal pass over full rows.
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                acc += tap * chan[[y, x + t]];
            }
            rows[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                acc += tap * rows[[y + t, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

fn window_stats(x: &Array2<f64>, y: &Array2<f64>, taps: &[f64]) -> WindowStats {
    let mu_x = filter_valid(x, taps);
    let mu_y = filter_valid(y, taps);
    let xx = filter_valid(&(x * x), taps);
    let yy = filter_valid(&(y * y), taps);
    let xy = filter_valid(&(x * y), taps);
    // E[x^2] - mu^2 can be a tiny negative from rounding; clamp at zero.
    let var_x = (&xx - &(&mu_x * &mu_x)).mapv(|v| v.max(0.0));
    let var_y = (&yy - &(&mu_y * &mu_y)).mapv(|v| v.max(0.0));
    let cov_xy = &xy - &(&mu_x * &mu_y);
    WindowStats { mu_x, mu_y, var_x, var_y, cov_xy }
}

fn check_pair<F: Scalar>(x: &ImageTensor<F>, y: &ImageTensor<F>, window: usize) -> Result<()> {
    if x.data().dim() != y.data().dim() {
        return Err(Error::Dimension(format!(
            "image shapes differ: {:?} vs {:?}",
            x.data().dim(),
            y.data().dim()
        )));
    }
    if x.range() != ValueRange::Unit || y.range() != ValueRange::Unit {
        return Err(Error::Contract("similarity metrics expect unit-range images".into()));
    }
    if x.height() < window || x.width() < window {
        return Err(Error::Dimension(format!(
            "image {}x{} smaller than window {window}",
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

fn channel_f64<F: Scalar>(img: &ImageTensor<F>, ch: usize) -> Array2<f64> {
    img.data().index_axis(ndarray::Axis(2), ch).mapv(|v| v.as_f64())
}

/// Mean luminance·contrast·structure over all windows and channels.
pub fn ssim<F: Scalar>(x: &ImageTensor<F>, y: &ImageTensor<F>, cfg: &SsimConfig) -> Result<F> {
    cfg.validate()?;
    check_pair(x, y, cfg.window)?;
    let taps = cfg.window_taps();
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut total = 0.0;
    for ch in 0..x.channels() {
        let s = window_stats(&channel_f64(x, ch), &channel_f64(y, ch), &taps);
        let mut acc = 0.0;
        let n = s.mu_x.len() as f64;
        for ((((&mx, &my), &vx), &vy), &cxy) in s
            .mu_x
            .iter()
            .zip(s.mu_y.iter())
            .zip(s.var_x.iter())
            .zip(s.var_y.iter())
            .zip(s.cov_xy.iter())
        {
            let lum_con = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            let cs = (2.0 * cxy + c2) / (vx + vy + c2);
            acc += lum_con * cs;
        }
        total += acc / n;
    }
    Ok(F::of_f64(total / x.channels() as f64))
}

/// Mean structure term `s = (σ_xy + C3) / (σ_x σ_y + C3)` over windows and
/// channels; invariant under positive affine intensity maps of either image.
pub fn structure_similarity<F: Scalar>(
    x: &ImageTensor<F>,
    y: &ImageTensor<F>,
    cfg: &SsimConfig,
) -> Result<F> {
    cfg.validate()?;
    check_pair(x, y, cfg.window)?;
    let taps = cfg.window_taps();
    let c3 = cfg.c3();
    let mut total = 0.0;
    for ch in 0..x.channels() {
        let s = window_stats(&channel_f64(x, ch), &channel_f64(y, ch), &taps);
        let mut acc = 0.0;
        let n = s.mu_x.len() as f64;
        for ((&vx, &vy), &cxy) in s.var_x.iter().zip(s.var_y.iter()).zip(s.cov_xy.iter()) {
            acc += (cxy + c3) / ((vx * vy).sqrt() + c3);
        }
        total += acc / n;
    }
    Ok(F::of_f64(total / x.channels() as f64))
}

/// 2×2 average-pool downsampling used between MS-SSIM scales.
fn downsample_2x2(chan: &Array2<f64>) -> Array2<f64> {
    let (h, w) = chan.dim();
    Array2::from_shape_fn((h / 2, w / 2), |(y, x)| {
        0.25 * (chan[[2 * y, 2 * x]]
            + chan[[2 * y, 2 * x + 1]]
            + chan[[2 * y + 1, 2 * x]]
            + chan[[2 * y + 1, 2 * x + 1]])
    })
}

/// 5-scale MS-SSIM with the standard weights.
pub fn ms_ssim<F: Scalar>(x: &ImageTensor<F>, y: &ImageTensor<F>, cfg: &SsimConfig) -> Result<F> {
    ms_ssim_with_scales(x, y, cfg, MS_SSIM_WEIGHTS.len())
}

/// MS-SSIM over `scales` scales; with fewer than 5 scales the weight prefix
/// is renormalized to sum to one.
///
/// Contrast·structure enters at every scale, luminance only at the coarsest,
/// each raised to its scale weight. Negative contrast·structure means are
/// clamped at zero before exponentiation.
pub fn ms_ssim_with_scales<F: Scalar>(
    x: &ImageTensor<F>,
    y: &ImageTensor<F>,
    cfg: &SsimConfig,
    scales: usize,
) -> Result<F> {
    cfg.validate()?;
    check_pair(x, y, cfg.window)?;
    if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::Config(format!("MS-SSIM scales must be 1..=5, got {scales}")));
    }
    let min_side = x.height().min(x.width());
    if min_side < (1 << (scales - 1)) * cfg.window {
        return Err(Error::Dimension(format!(
            "side {min_side} too small for {scales} scales with window {}",
            cfg.window
        )));
    }
    // The standard 5-scale weights are used as published; a reduced prefix is
    // renormalized to sum to one.
    let weights: Vec<f64> = if scales == MS_SSIM_WEIGHTS.len() {
        MS_SSIM_WEIGHTS.to_vec()
    } else {
        let weight_sum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
        MS_SSIM_WEIGHTS[..scales].iter().map(|w| w / weight_sum).collect()
    };
    let taps = cfg.window_taps();
    let (c1, c2) = (cfg.c1(), cfg.c2());

    let mut total = 0.0;
    for ch in 0..x.channels() {
        let mut cx = channel_f64(x, ch);
        let mut cy = channel_f64(y, ch);
        let mut score = 1.0;
        for (scale, &w) in weights.iter().enumerate() {
            let s = window_stats(&cx, &cy, &taps);
            let n = s.mu_x.len() as f64;
            let mut cs_acc = 0.0;
            let mut l_acc = 0.0;
            for ((((&mx, &my), &vx), &vy), &cxy) in s
                .mu_x
                .iter()
                .zip(s.mu_y.iter())
                .zip(s.var_x.iter())
                .zip(s.var_y.iter())
                .zip(s.cov_xy.iter())
            {
                cs_acc += (2.0 * cxy + c2) / (vx + vy + c2);
                l_acc += (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            }
            let cs = (cs_acc / n).max(0.0);
            if scale + 1 == weights.len() {
                let l = (l_acc / n).max(0.0);
                score *= (l * cs).powf(w);
            } else {
                score *= cs.powf(w);
                cx = downsample_2x2(&cx);
                cy = downsample_2x2(&cy);
            }
        }
        total += score;
    }
    Ok(F::of_f64(total / x.channels() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(side: usize, c: usize, seed: u64) -> ImageTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_simple_fn((side, side, c), || rng.gen::<f64>());
        ImageTensor::new(data, ValueRange::Unit).unwrap()
    }

    #[test]
    fn ssim_self_is_one() {
        let x = random_unit(32, 3, 1);
        let v: f64 = ssim(&x, &x, &SsimConfig::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "ssim(x,x) = {v}");
    }

    #[test]
    fn ssim_constant_pair_is_luminance_term() {
        let cfg = SsimConfig::default();
        let x = ImageTensor::<f64>::constant(16, 16, 1, 0.3, ValueRange::Unit).unwrap();
        let y = ImageTensor::<f64>::constant(16, 16, 1, 0.7, ValueRange::Unit).unwrap();
        let got: f64 = ssim(&x, &y, &cfg).unwrap();
        let c1 = cfg.c1();
        let expect = (2.0 * 0.3 * 0.7 + c1) / (0.3f64.powi(2) + 0.7f64.powi(2) + c1);
        assert!((got - expect).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_sliding_window_oracle() {
        // Brute-force oracle: evaluate each window by explicit weighted sums.
        let cfg = SsimConfig { window: 5, ..SsimConfig::default() };
        let x = random_unit(16, 1, 2);
        let y = random_unit(16, 1, 3);
        let got: f64 = ssim(&x, &y, &cfg).unwrap();

        let taps = cfg.window_taps();
        let (c1, c2) = (cfg.c1(), cfg.c2());
        let k = cfg.window;
        let n_out = 16 - k + 1;
        let mut acc = 0.0;
        for oy in 0..n_out {
            for ox in 0..n_out {
                let (mut mx, mut my) = (0.0, 0.0);
                for dy in 0..k {
                    for dx in 0..k {
                        let w = taps[dy] * taps[dx];
                        mx += w * x.data()[[oy + dy, ox + dx, 0]];
                        my += w * y.data()[[oy + dy, ox + dx, 0]];
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for dy in 0..k {
                    for dx in 0..k {
                        let w = taps[dy] * taps[dx];
                        let a = x.data()[[oy + dy, ox + dx, 0]] - mx;
                        let b = y.data()[[oy + dy, ox + dx, 0]] - my;
                        vx += w * a * a;
                        vy += w * b * b;
                        cxy += w * a * b;
                    }
                }
                acc += ((2.0 * mx * my + c1) / (mx * mx + my * my + c1))
                    * ((2.0 * cxy + c2) / (vx + vy + c2));
            }
        }
        let expect = acc / (n_out * n_out) as f64;
        assert!((got - expect).abs() < 1e-6, "{got} vs oracle {expect}");
    }

    #[test]
    fn ssim_rejects_shape_mismatch() {
        let x = random_unit(16, 1, 2);
        let y = random_unit(32, 1, 2);
        assert!(matches!(ssim(&x, &y, &SsimConfig::default()), Err(Error::Dimension(_))));
    }

    #[test]
    fn ssim_symmetric() {
        let x = random_unit(24, 3, 4);
        let y = random_unit(24, 3, 5);
        let cfg = SsimConfig::default();
        let a: f64 = ssim(&x, &y, &cfg).unwrap();
        let b: f64 = ssim(&y, &x, &cfg).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn ms_ssim_self_is_one() {
        let x = random_unit(256, 1, 6);
        let v: f64 = ms_ssim(&x, &x, &SsimConfig::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ms_ssim_detects_corrupted_block() {
        let x = random_unit(256, 1, 7);
        let mut data = x.data().clone();
        for y in 64..72 {
            for xx in 64..72 {
                data[[y, xx, 0]] = 1.0 - data[[y, xx, 0]];
            }
        }
        let y = ImageTensor::new(data, ValueRange::Unit).unwrap();
        let v: f64 = ms_ssim(&x, &y, &SsimConfig::default()).unwrap();
        assert!(v < 1.0 - 1e-4, "corruption not detected: {v}");
        assert!(v > 0.0);
    }

    #[test]
    fn ms_ssim_constant_pair_is_weighted_luminance() {
        let cfg = SsimConfig::default();
        let x = ImageTensor::<f64>::constant(256, 256, 1, 0.2, ValueRange::Unit).unwrap();
        let y = ImageTensor::<f64>::constant(256, 256, 1, 0.6, ValueRange::Unit).unwrap();
        let got: f64 = ms_ssim(&x, &y, &cfg).unwrap();
        // Oracle: cs terms are exactly 1, luminance enters at the coarsest
        // scale raised to its weight.
        let c1 = cfg.c1();
        let l = (2.0 * 0.2 * 0.6 + c1) / (0.04 + 0.36 + c1);
        let expect = l.powf(MS_SSIM_WEIGHTS[4]);
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn ms_ssim_too_small_errors() {
        let x = random_unit(64, 1, 8);
        assert!(matches!(
            ms_ssim(&x, &x, &SsimConfig::default()),
            Err(Error::Dimension(_))
        ));
        // Reduced scales fit.
        let v: f64 = ms_ssim_with_scales(&x, &x, &SsimConfig::default(), 3).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn structure_self_is_one() {
        let x = random_unit(32, 1, 9);
        let v: f64 = structure_similarity(&x, &x, &SsimConfig::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn structure_invariant_to_positive_affine() {
        let x = random_unit(32, 1, 10);
        let data = x.data().mapv(|v| 0.55 * v + 0.2);
        let y = ImageTensor::new(data, ValueRange::Unit).unwrap();
        let v: f64 = structure_similarity(&x, &y, &SsimConfig::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "affine image not structure-identical: {v}");
    }

    #[test]
    fn structure_contrast_inversion_is_minus_one() {
        // Contrast inversion around 0.5 flips the sign of every window
        // covariance exactly; with a negligible stabilizer the structure term
        // is -1. Cross-checked against the per-window sign-flip oracle.
        let cfg = SsimConfig { k2: 1e-5, ..SsimConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = Array3::from_shape_simple_fn((32, 32, 1), || 0.5 + 0.45 * (rng.gen::<f64>() - 0.5));
        let x = ImageTensor::new(data, ValueRange::Unit).unwrap();
        let inv = x.data().mapv(|v| 1.0 - v);
        let y = ImageTensor::new(inv, ValueRange::Unit).unwrap();
        let v: f64 = structure_similarity(&x, &y, &cfg).unwrap();
        assert!((v + 1.0).abs() < 1e-6, "inverted structure score {v}");
        let s_self: f64 = structure_similarity(&x, &x, &cfg).unwrap();
        assert!((s_self - 1.0).abs() < 1e-9);
    }
}
