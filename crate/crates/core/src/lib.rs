//! Bias transfer for microscopy-style images.
//!
//! This crate implements the full pipeline for adapting the appearance
//! ("bias") of one image domain to another without paired data:
//!
//! - [`image`]: the `ImageTensor` currency type, value-range handling and
//!   PNG/TIFF I/O.
//! - [`pyramid`]: Laplacian pyramids so models trained at a fixed resolution
//!   can transform full-resolution images.
//! - [`colorxfer`]: the non-learned color-transfer baseline (histogram
//!   matching in a decorrelated color space).
//! - [`metrics`]: SSIM, MS-SSIM, structure similarity, Fréchet feature
//!   distance, Dice scores and classification scores.
//! - [`autodiff`] / [`nn`]: a small reverse-mode tensor engine and the layers
//!   built on it.
//! - [`networks`]: generator/discriminator builders (resnet, U-Net and
//!   conditional generators; patch and dual-head discriminators).
//! - [`losses`]: adversarial, cycle, identity, MS-SSIM, structure, domain and
//!   gradient-penalty losses plus their weighting schedule.
//! - [`training`]: optimization loops, model selection and the
//!   full-resolution transform wrapper.
//! - [`synth`]: a seeded synthetic two-domain benchmark with ground-truth
//!   masks, class labels and a toy downstream classifier.
//! - [`report`]: CSV/JSON metric reports and boxplot rendering.
//!
//! Core numeric code is generic over the scalar type via [`Scalar`]
//! (`f32` or `f64`); the type aliases below fix the conventions used by the
//! training pipeline (f32) and the verification tests (f64).

pub mod autodiff;
pub mod colorxfer;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod pyramid;
pub mod report;
pub mod scalar;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Image type used by the training pipeline.
pub type Image32 = image::ImageTensor<f32>;
/// Image type used by high-precision verification code.
pub type Image64 = image::ImageTensor<f64>;
/// Autodiff tensor at training precision.
pub type Tensor32 = autodiff::Var<f32>;
/// Autodiff tensor at verification precision.
pub type Tensor64 = autodiff::Var<f64>;
