//! Synthetic two-domain benchmark.
//!
//! Procedural microscopy-style phantoms (smooth blob regions containing
//! small bright dots on a textured background) with exact ground-truth masks
//! and a geometry-derived class label, plus parameterized appearance bias to
//! fabricate two domains from identical content statistics, plus a small
//! classifier standing in for the downstream task.

mod benchmark;
mod bias;
mod downstream;
mod phantom;

pub use benchmark::{
    load_domain_images, load_domain_labels, load_domain_masks, make_benchmark,
    make_benchmark_with_rules, write_benchmark, Benchmark, BenchmarkManifest, DatasetSplit, Sample,
};
pub use bias::{apply_domain_bias, DomainBias};
pub use downstream::{
    evaluate_downstream, train_downstream, DownstreamConfig, DownstreamModel,
};
pub use phantom::{generate_phantom, ClassRule, Phantom, PhantomSpec};
