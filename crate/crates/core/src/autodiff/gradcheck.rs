//! Central finite-difference gradient verification.
//!
//! The forward closure is re-evaluated with perturbed leaf values, which is
//! independent of the backward implementation it checks.

use ndarray::ArrayD;

use super::Var;
use crate::scalar::Scalar;

/// Central finite differences of a scalar-valued forward pass with respect to
/// every element of every listed leaf.
pub fn finite_difference_grads<F: Scalar>(
    forward: &dyn Fn() -> Var<F>,
    leaves: &[&Var<F>],
    step: f64,
) -> Vec<ArrayD<F>> {
    let h = F::of_f64(step);
    let two_h = F::of_f64(2.0 * step);
    // Recording stays on during evaluation: losses that contain an inner
    // backward pass (the gradient penalty) need it even for plain values.
    leaves
        .iter()
        .map(|leaf| {
            let original = leaf.value();
            let mut grad = ArrayD::<F>::zeros(original.raw_dim());
            for idx in 0..original.len() {
                let mut plus = original.clone();
                plus.as_slice_mut().unwrap()[idx] += h;
                leaf.assign(&plus);
                let f_plus = forward().scalar_value();

                let mut minus = original.clone();
                minus.as_slice_mut().unwrap()[idx] -= h;
                leaf.assign(&minus);
                let f_minus = forward().scalar_value();

                grad.as_slice_mut().unwrap()[idx] = (f_plus - f_minus) / two_h;
            }
            leaf.assign(&original);
            grad
        })
        .collect()
}

/// Largest elementwise relative error between analytic gradients and central
/// finite differences: `|a - fd| / max(|a|, |fd|, 1e-6)`.
pub fn max_relative_error<F: Scalar>(
    forward: &dyn Fn() -> Var<F>,
    leaves: &[&Var<F>],
    analytic: &[ArrayD<F>],
    step: f64,
) -> f64 {
    let numeric = finite_difference_grads(forward, leaves, step);
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        for (&av, &nv) in a.iter().zip(n.iter()) {
            let av = av.as_f64();
            let nv = nv.as_f64();
            let denom = av.abs().max(nv.abs()).max(1e-6);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}
