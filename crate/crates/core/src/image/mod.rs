//! Image representation and value-range handling.
//!
//! An [`ImageTensor`] is an H×W×C float array tagged with the value range its
//! pixels live in. Every stage of the pipeline consumes and produces this
//! type; range conversion between the storage convention (`[0, 1]`) and the
//! generator convention (`[-1, 1]`) is explicit.

mod io;

pub use io::{load_image, save_image};

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Range slack tolerated when validating pixel values.
const RANGE_SLACK: f64 = 1e-6;

/// Declared value range of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    /// Pixels in `[0, 1]` (storage and metrics convention).
    Unit,
    /// Pixels in `[-1, 1]` (generator convention).
    Symmetric,
}

impl ValueRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Symmetric => (-1.0, 1.0),
        }
    }
}

/// H×W×C float image with an explicit value-range tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<F: Scalar> {
    data: Array3<F>,
    range: ValueRange,
}

impl<F: Scalar> ImageTensor<F> {
    /// Validates and wraps an H×W×C array.
    ///
    /// Requires finite values within the declared range (small slack), sides
    /// of at least 4 pixels (so a halved 8×8 image is still an image) and
    /// 1 or 3 channels.
    pub fn new(data: Array3<F>, range: ValueRange) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h < 4 || w < 4 {
            return Err(Error::Dimension(format!(
                "image sides must be >= 4, got {h}x{w}"
            )));
        }
        if c != 1 && c != 3 {
            return Err(Error::Channel(format!("channels must be 1 or 3, got {c}")));
        }
        let (lo, hi) = range.bounds();
        let lo = F::of_f64(lo - RANGE_SLACK);
        let hi = F::of_f64(hi + RANGE_SLACK);
        for &v in data.iter() {
            if !v.is_finite() {
                return Err(Error::Numeric("image contains non-finite values".into()));
            }
            if v < lo || v > hi {
                return Err(Error::Numeric(format!(
                    "pixel value {v} outside declared {range:?} range"
                )));
            }
        }
        Ok(Self { data, range })
    }

    /// Wraps an array after clipping it into the declared range.
    pub fn from_array_clipped(data: Array3<F>, range: ValueRange) -> Result<Self> {
        let (lo, hi) = range.bounds();
        let lo = F::of_f64(lo);
        let hi = F::of_f64(hi);
        let mut data = data;
        data.mapv_inplace(|v| v.max(lo).min(hi));
        Self::new(data, range)
    }

    /// Constant-valued image.
    pub fn constant(height: usize, width: usize, channels: usize, value: F, range: ValueRange) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, channels), value), range)
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn data(&self) -> &Array3<F> {
        &self.data
    }

    pub fn into_data(self) -> Array3<F> {
        self.data
    }

    /// Mean pixel value over the whole image.
    pub fn mean(&self) -> F {
        let n = F::from_usize(self.data.len()).unwrap();
        self.data.iter().copied().sum::<F>() / n
    }

    /// Per-channel means.
    pub fn channel_means(&self) -> Vec<F> {
        let (h, w, c) = self.data.dim();
        let n = F::from_usize(h * w).unwrap();
        (0..c)
            .map(|ch| {
                self.data
                    .index_axis(ndarray::Axis(2), ch)
                    .iter()
                    .copied()
                    .sum::<F>()
                    / n
            })
            .collect()
    }

    /// Maximum absolute per-pixel difference to another image of equal shape.
    pub fn max_abs_diff(&self, other: &Self) -> Result<F> {
        if self.data.dim() != other.data.dim() {
            return Err(Error::Dimension(format!(
                "shape mismatch: {:?} vs {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        let mut m = F::zero();
        Zip::from(&self.data).and(&other.data).for_each(|&a, &b| {
            let d = (a - b).abs();
            if d > m {
                m = d;
            }
        });
        Ok(m)
    }

    /// Converts to `f64` precision (used by verification oracles).
    pub fn to_f64(&self) -> ImageTensor<f64> {
        ImageTensor {
            data: self.data.mapv(|v| v.as_f64()),
            range: self.range,
        }
    }
}

/// Affine range conversion between `[0,1]` and `[-1,1]`.
///
/// Converting to the range an image already has returns it unchanged, so a
/// double conversion is the identity up to one rounding step in each
/// direction.
pub fn convert_range<F: Scalar>(img: &ImageTensor<F>, target: ValueRange) -> ImageTensor<F> {
    if img.range == target {
        return img.clone();
    }
    let two = F::of_f64(2.0);
    let one = F::one();
    let half = F::of_f64(0.5);
    let data = match (img.range, target) {
        (ValueRange::Unit, ValueRange::Symmetric) => img.data.mapv(|v| v * two - one),
        (ValueRange::Symmetric, ValueRange::Unit) => img.data.mapv(|v| (v + one) * half),
        _ => unreachable!("equal ranges handled above"),
    };
    // The affine map can overshoot by one ulp at the boundaries; clamp back.
    let (lo, hi) = target.bounds();
    let lo = F::of_f64(lo);
    let hi = F::of_f64(hi);
    let data = data.mapv(|v| v.max(lo).min(hi));
    ImageTensor { data, range: target }
}
