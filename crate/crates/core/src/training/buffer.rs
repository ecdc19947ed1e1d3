//! History buffer for discriminator updates.
//!
//! Discriminators of the cycle variants are trained against a pool of up to
//! 50 previously generated images instead of only the latest one, which
//! damps oscillation. With probability 1/2 the incoming image is swapped
//! against a random stored one.

use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

pub struct ImagePool<F: Scalar> {
    capacity: usize,
    items: Vec<ArrayD<F>>,
}

impl<F: Scalar> ImagePool<F> {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: Vec::with_capacity(capacity) }
    }

    /// Offers a generated image, returning the one to train on.
    pub fn query(&mut self, fake: ArrayD<F>, rng: &mut ChaCha8Rng) -> ArrayD<F> {
        if self.capacity == 0 {
            return fake;
        }
        if self.items.len() < self.capacity {
            self.items.push(fake.clone());
            return fake;
        }
        if rng.gen::<f64>() < 0.5 {
            let idx = rng.gen_range(0..self.items.len());
            let old = self.items[idx].clone();
            self.items[idx] = fake;
            old
        } else {
            fake
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
