//! Layers and optimization built on the autodiff engine.

pub mod adam;
pub mod init;
pub mod layers;

pub use adam::Adam;
pub use layers::{Conv2d, ConvTranspose2d, InstanceNorm2d, PadMode};

use crate::autodiff::Var;
use crate::scalar::Scalar;

/// Anything owning trainable tensors.
pub trait Layer<F: Scalar> {
    /// Appends the trainable leaves, in a stable order.
    fn collect_params(&self, out: &mut Vec<Var<F>>);
}

/// Total number of trainable scalars in a parameter list.
pub fn count_parameters<F: Scalar>(params: &[Var<F>]) -> usize {
    params.iter().map(|p| p.len()).sum()
}
