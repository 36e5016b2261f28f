use ndarray::{ArrayD, IxDyn};

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn filled(shape: &[usize], v: f32) -> Self {
        Self::new(ArrayD::from_elem(IxDyn(shape), v))
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns named parameters.
///
/// Names are dotted paths (`enc.0.conv.weight`) and the visiting order is
/// stable, which optimizers and checkpoints rely on.
pub trait Module {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.len());
        n
    }

    /// `(name, shape)` for every parameter, in visiting order.
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, p| out.push((name.to_string(), p.shape().to_vec())));
        out
    }

    /// Snapshot of every parameter value, in visiting order.
    fn named_values(&self, prefix: &str) -> Vec<(String, ArrayD<f32>)> {
        let mut out = Vec::new();
        self.visit_params(prefix, &mut |name, p| out.push((name.to_string(), p.value.clone())));
        out
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params("", &mut |_, p| ok &= p.value.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Joins a parent prefix and a child name with a dot.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
