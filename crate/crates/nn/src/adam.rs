//! Adaptive-moment optimizer with named, checkpointable state.

use std::collections::BTreeMap;

use ndarray::{ArrayD, Zip};

use crate::param::Module;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: ArrayD<f32>,
    pub second: ArrayD<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub steps: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, steps: 0, moments: BTreeMap::new() }
    }

    /// Applies one bias-corrected update to every parameter of `module`
    /// using its accumulated gradients.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M, lr: f32) {
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let moments = &mut self.moments;
        module.visit_params_mut("", &mut |name, p| {
            let m = moments.entry(name.to_string()).or_insert_with(|| Moments {
                first: ArrayD::zeros(p.value.raw_dim()),
                second: ArrayD::zeros(p.value.raw_dim()),
            });
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut m.first)
                .and(&mut m.second)
                .for_each(|w, &g, m1, m2| {
                    *m1 = beta1 * *m1 + (1.0 - beta1) * g;
                    *m2 = beta2 * *m2 + (1.0 - beta2) * g * g;
                    let mhat = *m1 / c1;
                    let vhat = *m2 / c2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        });
    }

    /// Flattens the moment estimates into `prefix.<param>.m1` / `.m2` tensors.
    pub fn named_state(&self, prefix: &str) -> Vec<(String, ArrayD<f32>)> {
        self.moments
            .iter()
            .flat_map(|(name, m)| {
                [
                    (format!("{prefix}.{name}.m1"), m.first.clone()),
                    (format!("{prefix}.{name}.m2"), m.second.clone()),
                ]
            })
            .collect()
    }

    /// Restores moments for every parameter of `module` from `lookup`.
    /// Returns the name of the first missing tensor on failure.
    pub fn restore_state<M: Module + ?Sized>(
        &mut self,
        module: &M,
        prefix: &str,
        steps: u64,
        lookup: &dyn Fn(&str) -> Option<ArrayD<f32>>,
    ) -> Result<(), String> {
        let mut moments = BTreeMap::new();
        let mut missing = None;
        module.visit_params("", &mut |name, _| {
            if missing.is_some() {
                return;
            }
            let k1 = format!("{prefix}.{name}.m1");
            let k2 = format!("{prefix}.{name}.m2");
            match (lookup(&k1), lookup(&k2)) {
                (Some(first), Some(second)) => {
                    moments.insert(name.to_string(), Moments { first, second });
                }
                _ if steps == 0 => {}
                _ => missing = Some(k1),
            }
        });
        if let Some(name) = missing {
            return Err(name);
        }
        self.moments = moments;
        self.steps = steps;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::{join, Param};

    struct Quadratic {
        w: Param,
    }

    impl Module for Quadratic {
        fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
            f(&join(prefix, "w"), &self.w);
        }
        fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
            f(&join(prefix, "w"), &mut self.w);
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut q = Quadratic { w: Param::filled(&[2], 1.0) };
        q.w.grad.assign(&ndarray::arr1(&[3.0f32, -0.5]).into_dyn());
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut q, 0.1);
        assert!((q.w.value[[0]] - 0.9).abs() < 1e-6);
        assert!((q.w.value[[1]] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn minimises_quadratic() {
        let mut q = Quadratic { w: Param::filled(&[3], 4.0) };
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..2000 {
            let w = q.w.value.clone();
            q.w.grad.assign(&(&w * 2.0));
            adam.step(&mut q, 0.05);
        }
        assert!(q.w.value.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn state_round_trip() {
        let mut q = Quadratic { w: Param::filled(&[2], 1.0) };
        q.w.grad.fill(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut q, 0.01);
        let named: BTreeMap<_, _> = adam.named_state("opt").into_iter().collect();
        let mut restored = Adam::new(AdamConfig::default());
        restored.restore_state(&q, "opt", adam.steps, &|k| named.get(k).cloned()).unwrap();
        assert_eq!(restored, adam);
        let mut broken = Adam::new(AdamConfig::default());
        assert!(broken.restore_state(&q, "opt", 1, &|_| None).is_err());
    }
}
