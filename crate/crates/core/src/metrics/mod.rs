//! Quantitative evaluation: content preservation, domain imitation and
//! downstream impact.

mod classify;
mod features;
mod fid;
mod report;
mod seg;
mod ssim;

pub use classify::classification_scores;
pub use features::{extract_features, ExtractorConfig, DEFAULT_EXTRACTOR_ID};
pub use fid::{frechet_distance, FeatureEmbedding};
pub use report::{read_pair_csv, write_pair_csv, MetricReport, PairRecord, Split};
pub use seg::{connected_components, dice_object, dice_pixel, SegMask};
pub use ssim::{ms_ssim, ms_ssim_with_scales, ssim, structure_similarity, SsimConfig, MS_SSIM_WEIGHTS};
