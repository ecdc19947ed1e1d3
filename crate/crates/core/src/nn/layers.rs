//! Convolution, transposed convolution and instance normalization.

use rand_chacha::ChaCha8Rng;

use super::init::{normal_param, zeros_param, WEIGHT_INIT_STD};
use super::Layer;
use crate::autodiff::Var;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Zero padding inside the convolution.
    Zeros,
    /// Reflect padding applied before an unpadded convolution.
    Reflect,
}

/// 2-D convolution layer, NCHW.
pub struct Conv2d<F: Scalar> {
    pub weight: Var<F>,
    pub bias: Option<Var<F>>,
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        pad_mode: PadMode,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = normal_param(&[c_out, c_in, kernel, kernel], WEIGHT_INIT_STD, rng);
        let bias = bias.then(|| zeros_param(&[c_out]));
        Self { weight, bias, stride, pad, pad_mode }
    }

    pub fn forward(&self, x: &Var<F>) -> Var<F> {
        let y = match self.pad_mode {
            PadMode::Zeros => x.conv2d(&self.weight, self.stride, self.pad),
            PadMode::Reflect => {
                let padded = if self.pad > 0 { x.pad_reflect(self.pad) } else { x.clone() };
                padded.conv2d(&self.weight, self.stride, 0)
            }
        };
        match &self.bias {
            Some(b) => {
                let shape = y.shape();
                y.add(&b.bias_broadcast(shape[0], shape[2], shape[3]))
            }
            None => y,
        }
    }
}

impl<F: Scalar> Layer<F> for Conv2d<F> {
    fn collect_params(&self, out: &mut Vec<Var<F>>) {
        out.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
    }
}

/// Transposed 2-D convolution, NCHW. With kernel 4, stride 2, pad 1 the
/// spatial size doubles exactly.
pub struct ConvTranspose2d<F: Scalar> {
    pub weight: Var<F>,
    pub bias: Option<Var<F>>,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Scalar> ConvTranspose2d<F> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        // Weight layout matches the adjoint conv: [c_in, c_out, k, k].
        let weight = normal_param(&[c_in, c_out, kernel, kernel], WEIGHT_INIT_STD, rng);
        let bias = bias.then(|| zeros_param(&[c_out]));
        Self { weight, bias, stride, pad }
    }

    pub fn forward(&self, x: &Var<F>) -> Var<F> {
        let y = x.conv_transpose2d(&self.weight, self.stride, self.pad);
        match &self.bias {
            Some(b) => {
                let shape = y.shape();
                y.add(&b.bias_broadcast(shape[0], shape[2], shape[3]))
            }
            None => y,
        }
    }
}

impl<F: Scalar> Layer<F> for ConvTranspose2d<F> {
    fn collect_params(&self, out: &mut Vec<Var<F>>) {
        out.push(self.weight.clone());
        if let Some(b) = &self.bias {
            out.push(b.clone());
        }
    }
}

/// Instance normalization without learned affine parameters: each channel of
/// each sample is standardized over its spatial extent.
pub struct InstanceNorm2d {
    pub eps: f64,
}

impl Default for InstanceNorm2d {
    fn default() -> Self {
        Self { eps: 1e-5 }
    }
}

impl InstanceNorm2d {
    pub fn forward<F: Scalar>(&self, x: &Var<F>) -> Var<F> {
        let shape = x.shape();
        let (h, w) = (shape[2], shape[3]);
        let n = (h * w) as f64;
        let mean = x.spatial_sum().mul_scalar(1.0 / n).spatial_broadcast(h, w);
        let centered = x.sub(&mean);
        let var = centered
            .square()
            .spatial_sum()
            .mul_scalar(1.0 / n)
            .spatial_broadcast(h, w);
        centered.div(&var.add_scalar(self.eps).sqrt())
    }
}
