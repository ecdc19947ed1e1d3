//! Color-transfer baseline: histogram matching in a decorrelated color space.
//!
//! RGB is mapped to the lαβ space (cone response via a fixed RGB→LMS matrix,
//! base-10 log, then the fixed orthogonal decorrelation transform), each
//! channel of the source is remapped so its empirical distribution matches a
//! single reference image, and the result is mapped back to RGB. Matching is
//! exact rank-based quantile mapping rather than binned histograms, so no
//! quantization enters the baseline.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, ValueRange};
use crate::scalar::Scalar;

/// Floor applied before the base-10 log to keep black pixels finite.
const LOG_FLOOR: f64 = 1e-6;

type Mat3 = [[f64; 3]; 3];

const RGB_TO_LMS: Mat3 = [
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
];

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_inverse(m: &Mat3) -> Mat3 {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    out
}

/// Decorrelation transform applied to log-LMS: `diag(1/√3, 1/√6, 1/√2) · [[1,1,1],[1,1,-2],[1,-1,0]]`.
fn loglms_to_lab_matrix() -> Mat3 {
    let s3 = 1.0 / 3f64.sqrt();
    let s6 = 1.0 / 6f64.sqrt();
    let s2 = 1.0 / 2f64.sqrt();
    [
        [s3, s3, s3],
        [s6, s6, -2.0 * s6],
        [s2, -s2, 0.0],
    ]
}

/// Converts a 3-channel unit-range image to its lαβ representation.
///
/// The l channel carries (log) luminance; α and β are the decorrelated
/// chromatic axes, both ~0 for achromatic pixels.
pub fn rgb_to_decorrelated<F: Scalar>(img: &ImageTensor<F>) -> Result<Array3<F>> {
    if img.channels() != 3 {
        return Err(Error::Channel(format!(
            "rgb_to_decorrelated needs 3 channels, got {}",
            img.channels()
        )));
    }
    if img.range() != ValueRange::Unit {
        return Err(Error::Contract("rgb_to_decorrelated expects unit range".into()));
    }
    let to_lab = loglms_to_lab_matrix();
    let (h, w, _) = img.data().dim();
    let mut out = Array3::<F>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let rgb = [
                img.data()[[y, x, 0]].as_f64(),
                img.data()[[y, x, 1]].as_f64(),
                img.data()[[y, x, 2]].as_f64(),
            ];
            let lms = mat_vec(&RGB_TO_LMS, rgb);
            let log_lms = [
                lms[0].max(LOG_FLOOR).log10(),
                lms[1].max(LOG_FLOOR).log10(),
                lms[2].max(LOG_FLOOR).log10(),
            ];
            let lab = mat_vec(&to_lab, log_lms);
            for ch in 0..3 {
                out[[y, x, ch]] = F::of_f64(lab[ch]);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`rgb_to_decorrelated`]; the result is clipped to `[0, 1]`.
pub fn decorrelated_to_rgb<F: Scalar>(lab: &Array3<F>) -> Result<ImageTensor<F>> {
    let (h, w, c) = lab.dim();
    if c != 3 {
        return Err(Error::Channel(format!("lαβ image needs 3 channels, got {c}")));
    }
    let from_lab = mat_inverse(&loglms_to_lab_matrix());
    let lms_to_rgb = mat_inverse(&RGB_TO_LMS);
    let mut out = Array3::<F>::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let v = [
                lab[[y, x, 0]].as_f64(),
                lab[[y, x, 1]].as_f64(),
                lab[[y, x, 2]].as_f64(),
            ];
            let log_lms = mat_vec(&from_lab, v);
            let lms = [
                10f64.powf(log_lms[0]),
                10f64.powf(log_lms[1]),
                10f64.powf(log_lms[2]),
            ];
            let rgb = mat_vec(&lms_to_rgb, lms);
            for ch in 0..3 {
                out[[y, x, ch]] = F::of_f64(rgb[ch].clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(out, ValueRange::Unit)
}

/// Remaps `src` so its empirical distribution matches `reference`.
///
/// Exact-sort quantile mapping: each element is assigned the reference
/// quantile of its mid-rank, which preserves the rank order of `src`
/// (ties map to equal outputs) and sends a constant input to the reference
/// median.
pub fn histogram_match_channel<F: Scalar>(
    src: &Array2<F>,
    reference: &Array2<F>,
) -> Result<Array2<F>> {
    for &v in src.iter().chain(reference.iter()) {
        if !v.is_finite() {
            return Err(Error::Numeric("histogram matching requires finite inputs".into()));
        }
    }
    if src.is_empty() || reference.is_empty() {
        return Err(Error::Empty("histogram matching requires non-empty arrays".into()));
    }

    let n_src = src.len();
    let flat_src: Vec<F> = src.iter().copied().collect();
    let mut order: Vec<usize> = (0..n_src).collect();
    order.sort_by(|&a, &b| flat_src[a].partial_cmp(&flat_src[b]).unwrap());

    let mut ref_sorted: Vec<F> = reference.iter().copied().collect();
    ref_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut out = vec![F::zero(); n_src];
    // Walk runs of tied source values; every member of a run gets the
    // reference quantile of the run's mid-rank.
    let mut start = 0;
    while start < n_src {
        let mut end = start + 1;
        while end < n_src && flat_src[order[end]] == flat_src[order[start]] {
            end += 1;
        }
        let q = if n_src == 1 {
            0.5
        } else {
            (start + end - 1) as f64 / 2.0 / (n_src - 1) as f64
        };
        let value = quantile(&ref_sorted, q);
        for &idx in &order[start..end] {
            out[idx] = value;
        }
        start = end;
    }
    Ok(Array2::from_shape_vec(src.dim(), out).expect("same length"))
}

/// Linear-interpolation quantile of a sorted slice, `q` in `[0, 1]`.
fn quantile<F: Scalar>(sorted: &[F], q: f64) -> F {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = F::of_f64(pos - lo as f64);
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

/// Full color transfer: both images to lαβ, per-channel histogram matching of
/// `src` against `reference`, back to RGB, clipped to `[0, 1]`.
pub fn color_transfer<F: Scalar>(
    src: &ImageTensor<F>,
    reference: &ImageTensor<F>,
) -> Result<ImageTensor<F>> {
    if src.channels() != 3 || reference.channels() != 3 {
        return Err(Error::Channel(format!(
            "color transfer needs 3-channel images, got {} and {}",
            src.channels(),
            reference.channels()
        )));
    }
    let src_lab = rgb_to_decorrelated(src)?;
    let ref_lab = rgb_to_decorrelated(reference)?;
    let (h, w, _) = src_lab.dim();
    let mut matched = Array3::<F>::zeros((h, w, 3));
    for ch in 0..3 {
        let s = src_lab.index_axis(ndarray::Axis(2), ch).to_owned();
        let r = ref_lab.index_axis(ndarray::Axis(2), ch).to_owned();
        let m = histogram_match_channel(&s, &r)?;
        matched.index_axis_mut(ndarray::Axis(2), ch).assign(&m);
    }
    decorrelated_to_rgb(&matched)
}

/// Seeded choice of the single reference image representing the target domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColorTransferSpec {
    pub reference_image_id: String,
    pub rng_seed: u64,
}

/// Draws one reference id uniformly from the target-domain training split.
pub fn pick_reference(candidate_ids: &[String], rng_seed: u64) -> Result<ColorTransferSpec> {
    if candidate_ids.is_empty() {
        return Err(Error::Empty("no candidate reference images".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let idx = rng.gen_range(0..candidate_ids.len());
    Ok(ColorTransferSpec {
        reference_image_id: candidate_ids[idx].clone(),
        rng_seed,
    })
}
