//! Feature extractor feeding the Fréchet distance.
//!
//! A fixed, seeded, randomly-initialized convolutional encoder: five 3×3
//! stride-2 conv stages with leaky-ReLU, global average pooling, 64
//! dimensions. The weights are a deterministic function of the extractor id,
//! so features are reproducible everywhere without a weights file.
//!
//! Absolute distances computed on these features are NOT comparable to
//! Inception-based FID numbers; they preserve orderings between domains,
//! which is what the benchmark needs. Users with an Inception-style network
//! can plug in their own embeddings through [`FeatureEmbedding`].

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fid::FeatureEmbedding;
use crate::error::{Error, Result};
use crate::image::{convert_range, ImageTensor, ValueRange};
use crate::nn::init::normal_array;
use crate::scalar::Scalar;

/// Default extractor id; the id fixes architecture, seed and therefore
/// weights.
pub const DEFAULT_EXTRACTOR_ID: &str = "conv5-gap-64-v1";

const STAGE_CHANNELS: [usize; 5] = [16, 32, 64, 64, 64];
const LEAKY_SLOPE: f64 = 0.1;

/// Architecture + seed bundle behind an extractor id.
#[derive(Debug, Clone)]
pub struct ExtractorConfig {
    pub id: String,
    pub seed: u64,
}

impl ExtractorConfig {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            DEFAULT_EXTRACTOR_ID => Ok(Self { id: id.to_string(), seed: 0x5eed_f1d0 }),
            other => Err(Error::UnknownExtractor(other.to_string())),
        }
    }
}

struct ConvStage<F> {
    // [out][in][3][3] flattened.
    weights: Vec<F>,
    c_in: usize,
    c_out: usize,
}

fn build_stages<F: Scalar>(cfg: &ExtractorConfig) -> Vec<ConvStage<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stages = Vec::new();
    let mut c_in = 3usize;
    for &c_out in &STAGE_CHANNELS {
        let fan_in = (c_in * 9) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weights = normal_array::<F>(c_out * c_in * 9, std, &mut rng);
        stages.push(ConvStage { weights, c_in, c_out });
        c_in = c_out;
    }
    stages
}

/// 3×3 stride-2 zero-padded convolution + leaky ReLU, plain loops.
fn stage_forward<F: Scalar>(stage: &ConvStage<F>, input: &Array3<F>) -> Array3<F> {
    let (c_in, h, w) = input.dim();
    debug_assert_eq!(c_in, stage.c_in);
    let oh = h / 2;
    let ow = w / 2;
    let slope = F::of_f64(LEAKY_SLOPE);
    let mut out = Array3::<F>::zeros((stage.c_out, oh, ow));
    for co in 0..stage.c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = F::zero();
                for ci in 0..c_in {
                    let wbase = ((co * c_in + ci) * 9) as usize;
                    for ky in 0..3usize {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc = acc
                                + stage.weights[wbase + ky * 3 + kx]
                                    * input[[ci, iy as usize, ix as usize]];
                        }
                    }
                }
                out[[co, oy, ox]] = if acc >= F::zero() { acc } else { acc * slope };
            }
        }
    }
    out
}

fn encode_one<F: Scalar>(stages: &[ConvStage<F>], img: &ImageTensor<F>) -> Array1<F> {
    let unit = convert_range(img, ValueRange::Unit);
    let (h, w, c) = unit.data().dim();
    // Channels-first; grayscale replicated to 3 channels.
    let mut x = Array3::<F>::zeros((3, h, w));
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..3 {
                let src = if c == 1 { 0 } else { ch };
                x[[ch, y, xx]] = unit.data()[[y, xx, src]];
            }
        }
    }
    for stage in stages {
        x = stage_forward(stage, &x);
    }
    let (cf, hf, wf) = x.dim();
    let n = F::from_usize(hf * wf).unwrap();
    Array1::from_shape_fn(cf, |ch| {
        x.index_axis(ndarray::Axis(0), ch).iter().copied().sum::<F>() / n
    })
}

/// Embeds a list of images with the extractor named by `extractor_id`.
///
/// Deterministic given the id; images may differ in size (each is encoded
/// independently and pooled globally) but sides must be at least 32.
pub fn extract_features<F: Scalar>(
    images: &[ImageTensor<F>],
    extractor_id: &str,
) -> Result<FeatureEmbedding<F>> {
    if images.is_empty() {
        return Err(Error::Empty("extract_features needs at least one image".into()));
    }
    let cfg = ExtractorConfig::from_id(extractor_id)?;
    for img in images {
        if img.height() < 32 || img.width() < 32 {
            return Err(Error::Dimension(format!(
                "extractor needs sides >= 32, got {}x{}",
                img.height(),
                img.width()
            )));
        }
    }
    let stages = build_stages::<F>(&cfg);
    let dim = *STAGE_CHANNELS.last().unwrap();
    let rows: Vec<Array1<F>> = {
        use rayon::prelude::*;
        images.par_iter().map(|img| encode_one(&stages, img)).collect()
    };
    let mut features = Array2::<F>::zeros((images.len(), dim));
    for (i, row) in rows.into_iter().enumerate() {
        features.row_mut(i).assign(&row);
    }
    FeatureEmbedding::new(cfg.id, features)
}
