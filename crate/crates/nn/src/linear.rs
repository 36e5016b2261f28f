use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis, Ix2};
use rand::Rng;

use crate::init;
use crate::param::{join, Module, Param};

/// Fully connected layer on `[batch, features]` inputs, weight `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            weight: Param::zeros(&[out_features, in_features]),
            bias: Param::zeros(&[out_features]),
            in_features,
            out_features,
        }
    }

    pub fn init_he<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        init::fill_he_normal(&mut self.weight.value, self.in_features, rng);
        self.bias.value.fill(0.0);
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init_glorot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let limit = (6.0 / (self.in_features + self.out_features) as f32).sqrt();
        self.weight.value.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
        self.bias.value.fill(0.0);
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f32> {
        self.weight.value.view().into_dimensionality::<Ix2>().expect("2-D weight")
    }

    pub fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, Array2<f32>) {
        assert_eq!(x.ncols(), self.in_features, "linear input features");
        let mut y = Array2::<f32>::zeros((x.nrows(), self.out_features));
        general_mat_mul(1.0, x, &self.weight_matrix().t(), 0.0, &mut y);
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        y += &b;
        (y, x.clone())
    }

    pub fn backward(&mut self, input: &Array2<f32>, dy: &Array2<f32>, param_grads: bool) -> Array2<f32> {
        if param_grads {
            let mut gw = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            general_mat_mul(1.0, &dy.t(), input, 1.0, &mut gw);
            let gb = dy.sum_axis(Axis(0));
            self.bias.grad.iter_mut().zip(gb.iter()).for_each(|(g, s)| *g += s);
        }
        dy.dot(&self.weight_matrix())
    }
}

impl Module for Linear {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
