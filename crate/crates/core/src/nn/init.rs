//! Seeded weight initialization.
//!
//! Gaussian sampling is done with an explicit Box-Muller transform over a
//! ChaCha stream, so initial weights are bit-stable across platforms and
//! dependency updates.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::scalar::Scalar;

/// Standard deviation of generator/discriminator weight init.
pub const WEIGHT_INIT_STD: f64 = 0.02;

/// One standard normal draw via Box-Muller.
pub fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    // Avoid log(0) by shifting the open interval.
    let u1: f64 = loop {
        let v = rng.gen::<f64>();
        if v > 1e-12 {
            break v;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `n` zero-mean Gaussian samples with the given standard deviation.
pub fn normal_array<F: Scalar>(n: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<F> {
    (0..n).map(|_| F::of_f64(normal_sample(rng) * std)).collect()
}

/// Gaussian-initialized trainable tensor.
pub fn normal_param<F: Scalar>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Var<F> {
    let n: usize = shape.iter().product();
    let data = ArrayD::from_shape_vec(IxDyn(shape), normal_array(n, std, rng)).unwrap();
    Var::param(data)
}

/// Zero-initialized trainable tensor (biases).
pub fn zeros_param<F: Scalar>(shape: &[usize]) -> Var<F> {
    Var::param(ArrayD::zeros(IxDyn(shape)))
}
