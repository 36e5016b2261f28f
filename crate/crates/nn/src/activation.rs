//! Pointwise activations. Each backward takes the forward *output*.

use ndarray::{Array, Dimension, Zip};

pub fn leaky_relu<D: Dimension>(x: &Array<f32, D>, slope: f32) -> Array<f32, D> {
    x.mapv(|v| if v > 0.0 { v } else { slope * v })
}

pub fn leaky_relu_backward<D: Dimension>(y: &Array<f32, D>, dy: &Array<f32, D>, slope: f32) -> Array<f32, D> {
    Zip::from(y).and(dy).map_collect(|&y, &g| if y > 0.0 { g } else { slope * g })
}

pub fn relu<D: Dimension>(x: &Array<f32, D>) -> Array<f32, D> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward<D: Dimension>(y: &Array<f32, D>, dy: &Array<f32, D>) -> Array<f32, D> {
    Zip::from(y).and(dy).map_collect(|&y, &g| if y > 0.0 { g } else { 0.0 })
}

pub fn tanh<D: Dimension>(x: &Array<f32, D>) -> Array<f32, D> {
    x.mapv(f32::tanh)
}

pub fn tanh_backward<D: Dimension>(y: &Array<f32, D>, dy: &Array<f32, D>) -> Array<f32, D> {
    Zip::from(y).and(dy).map_collect(|&y, &g| g * (1.0 - y * y))
}

/// Exponential linear unit with unit scale.
pub fn elu<D: Dimension>(x: &Array<f32, D>) -> Array<f32, D> {
    x.mapv(|v| if v > 0.0 { v } else { v.exp_m1() })
}

pub fn elu_backward<D: Dimension>(y: &Array<f32, D>, dy: &Array<f32, D>) -> Array<f32, D> {
    Zip::from(y).and(dy).map_collect(|&y, &g| if y > 0.0 { g } else { g * (y + 1.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd<F: Fn(f32) -> f32>(f: F, x: f32) -> f32 {
        let h = 1e-3;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn derivatives_from_outputs() {
        let x = array![-1.5f32, -0.2, 0.3, 2.0];
        let ones = Array::ones(x.raw_dim());
        let checks: [(&dyn Fn(f32) -> f32, Array<f32, _>); 4] = [
            (&|v: f32| if v > 0.0 { v } else { 0.2 * v }, leaky_relu_backward(&leaky_relu(&x, 0.2), &ones, 0.2)),
            (&|v: f32| v.max(0.0), relu_backward(&relu(&x), &ones)),
            (&|v: f32| v.tanh(), tanh_backward(&tanh(&x), &ones)),
            (&|v: f32| if v > 0.0 { v } else { v.exp_m1() }, elu_backward(&elu(&x), &ones)),
        ];
        for (f, grad) in checks.iter() {
            for (xi, gi) in x.iter().zip(grad.iter()) {
                assert!((fd(f, *xi) - gi).abs() < 1e-2, "x={xi}: {} vs {gi}", fd(f, *xi));
            }
        }
    }
}
