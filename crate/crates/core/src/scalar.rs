//! Floating-point scalar abstraction.
//!
//! Everything numeric in this crate is generic over [`Scalar`] so the same
//! code runs at f32 (training speed) and f64 (verification precision).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type for images, tensors and metrics: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Runtime dtype tag used by checkpoint files.
    const DTYPE: &'static str;

    /// Lossy conversion from f64; panics only for non-finite overflow cases
    /// that cannot occur for the constants used in this crate.
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 constant not representable")
    }

    /// Widening conversion to f64.
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}
