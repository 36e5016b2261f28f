//! Weight initialisation schemes.

use ndarray::{ArrayD, Dimension, Array};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Fills `values` with draws from Normal(0, std).
pub fn fill_normal<D: Dimension, R: Rng + ?Sized>(values: &mut Array<f32, D>, std: f32, rng: &mut R) {
    let dist = Normal::new(0.0f32, std).expect("finite std");
    values.iter_mut().for_each(|v| *v = dist.sample(rng));
}

/// He (Kaiming) normal initialisation: Normal(0, sqrt(2 / fan_in)).
pub fn fill_he_normal<R: Rng + ?Sized>(values: &mut ArrayD<f32>, fan_in: usize, rng: &mut R) {
    let std = (2.0 / fan_in.max(1) as f32).sqrt();
    fill_normal(values, std, rng);
}
