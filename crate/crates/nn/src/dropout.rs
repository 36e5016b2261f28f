use ndarray::{Array, Dimension, Zip};
use rand::Rng;

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` so inference
/// is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f32,
}

impl Dropout {
    pub fn new(rate: f32) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
        Self { rate }
    }

    /// Returns the output and the per-unit scale mask (0 or `1/(1-rate)`).
    pub fn forward<D: Dimension, R: Rng + ?Sized>(&self, x: &Array<f32, D>, rng: &mut R) -> (Array<f32, D>, Array<f32, D>) {
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask = x.map(|_| if rng.random::<f32>() < keep { scale } else { 0.0 });
        (x * &mask, mask)
    }

    pub fn backward<D: Dimension>(mask: &Array<f32, D>, dy: &Array<f32, D>) -> Array<f32, D> {
        Zip::from(mask).and(dy).map_collect(|&m, &g| m * g)
    }
}
