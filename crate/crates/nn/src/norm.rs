//! Instance normalisation (per sample, per channel) and batch normalisation
//! over dense features.

use ndarray::{Array1, Array2, Array4, Axis, Ix1, Zip};

use crate::param::{join, Module, Param};

pub const NORM_EPS: f32 = 1e-5;

/// Per-sample, per-channel normalisation over the spatial plane with an
/// affine `gamma`/`beta` per channel. No running statistics are kept.
#[derive(Debug, Clone)]
pub struct InstanceNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub struct InstanceNormCache {
    xhat: Array4<f32>,
    inv_std: Array2<f32>,
}

impl InstanceNorm2d {
    pub fn new(channels: usize) -> Self {
        Self { gamma: Param::filled(&[channels], 1.0), beta: Param::zeros(&[channels]), channels }
    }

    pub fn reset(&mut self) {
        self.gamma.value.fill(1.0);
        self.beta.value.fill(0.0);
    }

    pub fn forward(&self, x: &Array4<f32>) -> (Array4<f32>, InstanceNormCache) {
        let (n, c, _, _) = x.dim();
        assert_eq!(c, self.channels, "instance norm channels");
        let mut xhat = x.as_standard_layout().into_owned();
        let mut y = Array4::<f32>::zeros(x.raw_dim());
        let mut inv_std = Array2::<f32>::zeros((n, c));
        for i in 0..n {
            for ch in 0..c {
                let mut plane = xhat.slice_mut(ndarray::s![i, ch, .., ..]);
                let m = plane.len() as f32;
                let mean = plane.sum() / m;
                let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / m;
                let is = 1.0 / (var + NORM_EPS).sqrt();
                plane.mapv_inplace(|v| (v - mean) * is);
                inv_std[[i, ch]] = is;
                let (g, b) = (self.gamma.value[[ch]], self.beta.value[[ch]]);
                Zip::from(y.slice_mut(ndarray::s![i, ch, .., ..]))
                    .and(&plane)
                    .for_each(|o, &xh| *o = g * xh + b);
            }
        }
        (y, InstanceNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &InstanceNormCache, dy: &Array4<f32>, param_grads: bool) -> Array4<f32> {
        let (n, c, _, _) = dy.dim();
        let mut dx = Array4::<f32>::zeros(dy.raw_dim());
        for i in 0..n {
            for ch in 0..c {
                let g = self.gamma.value[[ch]];
                let xhat = cache.xhat.slice(ndarray::s![i, ch, .., ..]);
                let dyp = dy.slice(ndarray::s![i, ch, .., ..]);
                let m = xhat.len() as f32;
                let mut sum_dy = 0.0f32;
                let mut sum_dy_xhat = 0.0f32;
                Zip::from(&dyp).and(&xhat).for_each(|&d, &xh| {
                    sum_dy += d;
                    sum_dy_xhat += d * xh;
                });
                if param_grads {
                    self.gamma.grad[[ch]] += sum_dy_xhat;
                    self.beta.grad[[ch]] += sum_dy;
                }
                let k = g * cache.inv_std[[i, ch]] / m;
                Zip::from(dx.slice_mut(ndarray::s![i, ch, .., ..]))
                    .and(&dyp)
                    .and(&xhat)
                    .for_each(|o, &d, &xh| *o = k * (m * d - sum_dy - xh * sum_dy_xhat));
            }
        }
        dx
    }
}

impl Module for InstanceNorm2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Batch normalisation over `[batch, features]`, with running statistics for
/// inference.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub momentum: f32,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Array2<f32>,
    inv_std: Array1<f32>,
    batch_mean: Array1<f32>,
    batch_var: Array1<f32>,
    training: bool,
}

impl BatchNorm1d {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Param::filled(&[features], 1.0),
            beta: Param::zeros(&[features]),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            momentum: 0.1,
        }
    }

    /// Normalises with batch statistics when `training`, otherwise with the
    /// running estimates. Call [`BatchNorm1d::update_running`] afterwards to
    /// fold the batch statistics in.
    pub fn forward(&self, x: &Array2<f32>, training: bool) -> (Array2<f32>, BatchNormCache) {
        let (mean, var) = if training {
            let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
            let var = x.var_axis(Axis(0), 0.0);
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
        let xhat = (x - &mean) * &inv_std;
        let g = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let b = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();
        let y = &xhat * &g + &b;
        (y, BatchNormCache { xhat, inv_std, batch_mean: mean, batch_var: var, training })
    }

    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if !cache.training {
            return;
        }
        let m = self.momentum;
        let n = cache.xhat.nrows() as f32;
        let unbiased = if n > 1.0 { &cache.batch_var * (n / (n - 1.0)) } else { cache.batch_var.clone() };
        self.running_mean = &self.running_mean * (1.0 - m) + &cache.batch_mean * m;
        self.running_var = &self.running_var * (1.0 - m) + unbiased * m;
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Array2<f32>, param_grads: bool) -> Array2<f32> {
        let g = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap().to_owned();
        let sum_dy = dy.sum_axis(Axis(0));
        let sum_dy_xhat = (dy * &cache.xhat).sum_axis(Axis(0));
        if param_grads {
            self.gamma.grad.iter_mut().zip(sum_dy_xhat.iter()).for_each(|(a, b)| *a += b);
            self.beta.grad.iter_mut().zip(sum_dy.iter()).for_each(|(a, b)| *a += b);
        }
        if !cache.training {
            return dy * &(&g * &cache.inv_std);
        }
        let m = dy.nrows() as f32;
        let k = &g * &cache.inv_std / m;
        ((dy * m) - &sum_dy - &cache.xhat * &sum_dy_xhat) * &k
    }
}

impl Module for BatchNorm1d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}
