//! Adam optimizer.

use std::collections::HashMap;

use ndarray::ArrayD;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

struct Slot<F> {
    m: ArrayD<F>,
    v: ArrayD<F>,
}

/// Adam with per-parameter first/second moment state. β1 defaults to 0.5
/// (the GAN convention used throughout this crate).
pub struct Adam<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    slots: HashMap<u64, Slot<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, t: 0, slots: HashMap::new() }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Applies one update step; `grads` must align with `params`.
    pub fn step(&mut self, params: &[Var<F>], grads: &[ArrayD<F>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "optimizer got {} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let b1 = F::of_f64(self.beta1);
        let b2 = F::of_f64(self.beta2);
        let one_m_b1 = F::of_f64(1.0 - self.beta1);
        let one_m_b2 = F::of_f64(1.0 - self.beta2);
        let bias1 = F::of_f64(1.0 - self.beta1.powi(self.t as i32));
        let bias2 = F::of_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = F::of_f64(self.lr);
        let eps = F::of_f64(self.eps);

        for (p, g) in params.iter().zip(grads.iter()) {
            let slot = self.slots.entry(p.id()).or_insert_with(|| Slot {
                m: ArrayD::zeros(g.raw_dim()),
                v: ArrayD::zeros(g.raw_dim()),
            });
            ndarray::Zip::from(&mut slot.m).and(g).for_each(|m, &gv| {
                *m = *m * b1 + gv * one_m_b1;
            });
            ndarray::Zip::from(&mut slot.v).and(g).for_each(|v, &gv| {
                *v = *v * b2 + gv * gv * one_m_b2;
            });
            let (m, v) = (&slot.m, &slot.v);
            p.update_value(|value| {
                ndarray::Zip::from(value).and(m).and(v).for_each(|pv, &mv, &vv| {
                    let m_hat = mv / bias1;
                    let v_hat = vv / bias2;
                    *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
                });
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_arrays;
    use ndarray::IxDyn;

    #[test]
    fn adam_minimizes_quadratic() {
        let x = Var::param(ArrayD::from_elem(IxDyn(&[2]), 3.0f64));
        let mut opt = Adam::new(0.1, 0.5, 0.999);
        for _ in 0..300 {
            let loss = x.add_scalar(-1.0).square().sum_all();
            let grads = grad_arrays(&loss, &[&x]).unwrap();
            opt.step(std::slice::from_ref(&x), &grads).unwrap();
        }
        let v = x.value();
        assert!((v[[0]] - 1.0).abs() < 1e-3, "converged to {}", v[[0]]);
    }

    #[test]
    fn step_rejects_misaligned_grads() {
        let x = Var::param(ArrayD::from_elem(IxDyn(&[1]), 0.0f32));
        let mut opt = Adam::new(0.1, 0.5, 0.999);
        assert!(opt.step(std::slice::from_ref(&x), &[]).is_err());
    }
}
