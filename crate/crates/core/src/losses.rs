//! Adversarial, cycle, identity and background-mask losses.
//!
//! Every loss returns its value together with the gradient with respect to
//! the generated tensor(s), so training needs no automatic differentiation.
//! Functions are generic over the float type; training uses `f32` while the
//! tests check gradients in `f64`. All L1 terms are element means.

use ndarray::{Array, Array3, Array4, Axis, Dimension, Zip};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::mask::ContactMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AdversarialMode {
    /// Binary cross-entropy on logits, non-saturating generator term.
    Log,
    #[default]
    LeastSquares,
}

/// Named background-constraint settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPreset {
    /// Background pulled towards the simulated image.
    MaskSim,
    /// Background pulled towards the real image.
    MaskReal,
    MaskCombined,
}

impl MaskPreset {
    pub fn alpha(self) -> f64 {
        match self {
            MaskPreset::MaskSim => 1.0,
            MaskPreset::MaskReal => 0.0,
            MaskPreset::MaskCombined => 0.5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MaskPreset::MaskSim => "Mask Sim",
            MaskPreset::MaskReal => "Mask Real",
            MaskPreset::MaskCombined => "Mask Combined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub gan: f64,
    pub cycle: f64,
    pub identity: f64,
    pub mask: f64,
    /// Share of the simulated image in the background target.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { gan: 1.0, cycle: 10.0, identity: 5.0, mask: 10.0, alpha: 1.0 }
    }
}

impl LossWeights {
    pub fn with_preset(self, preset: MaskPreset) -> Self {
        Self { alpha: preset.alpha(), ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gan", self.gan), ("cycle", self.cycle), ("identity", self.identity), ("mask", self.mask)] {
            ensure!(v >= 0.0 && v.is_finite(), Config, "loss weight `{name}` must be finite and >= 0, got {v}");
        }
        ensure!((0.0..=1.0).contains(&self.alpha), Config, "alpha must lie in [0, 1], got {}", self.alpha);
        Ok(())
    }

    /// Whether the mask term needs real images.
    pub fn needs_real(&self) -> bool {
        self.mask > 0.0 && self.alpha < 1.0
    }
}

/// Per-step scalar loss terms. `total` is the weighted generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub gan_g: f64,
    pub gan_d: f64,
    pub cycle: f64,
    pub identity: f64,
    pub mask: f64,
    pub total: f64,
}

impl LossReport {
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("gan_g", self.gan_g),
            ("gan_d", self.gan_d),
            ("cycle", self.cycle),
            ("identity", self.identity),
            ("mask", self.mask),
            ("total", self.total),
        ]
    }

    /// Name of the first non-finite term.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.terms().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }
}

/// `(generator_total, discriminator_total)`.
pub fn total_objective(report: &LossReport, weights: &LossWeights) -> (f64, f64) {
    let g = weights.gan * report.gan_g
        + weights.cycle * report.cycle
        + weights.identity * report.identity
        + weights.mask * report.mask;
    (g, weights.gan * report.gan_d)
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("representable constant")
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Float>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn mean_map<T: Float, D: Dimension>(a: &Array<T, D>, f: impl Fn(T) -> T) -> T {
    let n = cast::<T>(a.len().max(1) as f64);
    a.iter().fold(T::zero(), |acc, &v| acc + f(v)) / n
}

fn check_finite<T: Float, D: Dimension>(a: &Array<T, D>, what: &str) -> Result<()> {
    ensure!(a.iter().all(|v| v.is_finite()), Numerical, "non-finite {what}");
    Ok(())
}

fn check_shapes<T, D: Dimension>(a: &Array<T, D>, b: &Array<T, D>, what: &str) -> Result<()> {
    ensure!(a.shape() == b.shape(), Validation, "{what}: shape {:?} vs {:?}", a.shape(), b.shape());
    Ok(())
}

/// Discriminator loss on real and fake logits, with gradients for both.
pub fn discriminator_loss<T: Float, D: Dimension>(
    real: &Array<T, D>,
    fake: &Array<T, D>,
    mode: AdversarialMode,
) -> Result<(T, Array<T, D>, Array<T, D>)> {
    check_finite(real, "real logits")?;
    check_finite(fake, "fake logits")?;
    let (nr, nf) = (cast::<T>(real.len() as f64), cast::<T>(fake.len() as f64));
    let two = cast::<T>(2.0);
    Ok(match mode {
        AdversarialMode::Log => {
            let loss = mean_map(real, |r| softplus(-r)) + mean_map(fake, softplus);
            (loss, real.mapv(|r| -sigmoid(-r) / nr), fake.mapv(|f| sigmoid(f) / nf))
        }
        AdversarialMode::LeastSquares => {
            let loss = mean_map(real, |r| (r - T::one()).powi(2)) + mean_map(fake, |f| f * f);
            (loss, real.mapv(|r| two * (r - T::one()) / nr), fake.mapv(|f| two * f / nf))
        }
    })
}

/// Generator adversarial loss on fake logits and its gradient.
pub fn generator_adversarial_loss<T: Float, D: Dimension>(
    fake: &Array<T, D>,
    mode: AdversarialMode,
) -> Result<(T, Array<T, D>)> {
    check_finite(fake, "fake logits")?;
    let nf = cast::<T>(fake.len() as f64);
    let two = cast::<T>(2.0);
    Ok(match mode {
        AdversarialMode::Log => (mean_map(fake, |f| softplus(-f)), fake.mapv(|f| -sigmoid(-f) / nf)),
        AdversarialMode::LeastSquares => {
            (mean_map(fake, |f| (f - T::one()).powi(2)), fake.mapv(|f| two * (f - T::one()) / nf))
        }
    })
}

/// `(loss_d, loss_g)` for one discriminator.
pub fn adversarial_loss<T: Float, D: Dimension>(
    real: &Array<T, D>,
    fake: &Array<T, D>,
    mode: AdversarialMode,
) -> Result<(T, T)> {
    let (d, _, _) = discriminator_loss(real, fake, mode)?;
    let (g, _) = generator_adversarial_loss(fake, mode)?;
    Ok((d, g))
}

/// `mean|a - target|` and its gradient with respect to `a`.
pub fn l1_mean<T: Float, D: Dimension>(a: &Array<T, D>, target: &Array<T, D>) -> Result<(T, Array<T, D>)> {
    check_shapes(a, target, "l1 operands")?;
    let n = cast::<T>(a.len().max(1) as f64);
    let mut sum = T::zero();
    let grad = Zip::from(a).and(target).map_collect(|&x, &t| {
        let d = x - t;
        sum = sum + d.abs();
        sign(d) / n
    });
    Ok((sum / n, grad))
}

fn sign<T: Float>(d: T) -> T {
    if d > T::zero() {
        T::one()
    } else if d < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Cycle loss `mean|x_s − cycled_s| + mean|x_r − cycled_r|`, with gradients
/// for the two cycled tensors.
pub fn cycle_loss<T: Float, D: Dimension>(
    x_s: &Array<T, D>,
    cycled_s: &Array<T, D>,
    x_r: &Array<T, D>,
    cycled_r: &Array<T, D>,
) -> Result<(T, Array<T, D>, Array<T, D>)> {
    let (ls, gs) = l1_mean(cycled_s, x_s)?;
    let (lr, gr) = l1_mean(cycled_r, x_r)?;
    Ok((ls + lr, gs, gr))
}

/// Identity loss `mean|x_s − G_rs(x_s)| + mean|x_r − G_sr(x_r)|`, with
/// gradients for the two generator outputs.
pub fn identity_loss<T: Float, D: Dimension>(
    x_s: &Array<T, D>,
    g_rs_of_xs: &Array<T, D>,
    x_r: &Array<T, D>,
    g_sr_of_xr: &Array<T, D>,
) -> Result<(T, Array<T, D>, Array<T, D>)> {
    cycle_loss(x_s, g_rs_of_xs, x_r, g_sr_of_xr)
}

/// Stacks the background weights `1 − m` of a batch of masks.
pub fn background_batch<T: Float>(masks: &[&ContactMask]) -> Array3<T> {
    let views: Vec<_> = masks.iter().map(|m| m.values().mapv(|v| if v == 1 { T::zero() } else { T::one() })).collect();
    let views: Vec<_> = views.iter().map(|v| v.view()).collect();
    ndarray::stack(Axis(0), &views).expect("equal mask dims")
}

/// Background loss
/// `mean[(α|a − x_s| + (1 − α)|a − x_r|) · (1 − m)]` over `[n, c, h, w]`,
/// with `background = 1 − m` of shape `[n, h, w]` broadcast over channels.
/// Returns the value and the gradient with respect to `adapted`.
pub fn mask_loss<T: Float>(
    adapted: &Array4<T>,
    x_s: &Array4<T>,
    x_r: Option<&Array4<T>>,
    background: &Array3<T>,
    alpha: T,
) -> Result<(T, Array4<T>)> {
    ensure!(
        alpha >= T::zero() && alpha <= T::one(),
        Validation,
        "alpha must lie in [0, 1], got {}",
        alpha.to_f64().unwrap_or(f64::NAN)
    );
    check_shapes(adapted, x_s, "mask loss adapted vs simulated")?;
    let (n, c, h, w) = adapted.dim();
    ensure!(background.dim() == (n, h, w), Validation, "mask dims {:?} do not match images", background.dim());
    let real_weight = T::one() - alpha;
    let x_r = match x_r {
        Some(r) => {
            check_shapes(adapted, r, "mask loss adapted vs real")?;
            Some(r)
        }
        None => {
            ensure!(real_weight == T::zero(), Validation, "mask loss with alpha < 1 needs paired real images");
            None
        }
    };
    let count = cast::<T>((n * c * h * w).max(1) as f64);
    let mut sum = T::zero();
    let mut grad = Array4::<T>::zeros(adapted.raw_dim());
    for ((i, ch, r, col), g) in grad.indexed_iter_mut() {
        let bg = background[[i, r, col]];
        let a = adapted[[i, ch, r, col]];
        let ds = a - x_s[[i, ch, r, col]];
        let (mut term, mut slope) = (alpha * ds.abs(), alpha * sign(ds));
        if let Some(xr) = x_r {
            let dr = a - xr[[i, ch, r, col]];
            term = term + real_weight * dr.abs();
            slope = slope + real_weight * sign(dr);
        }
        sum = sum + term * bg;
        *g = slope * bg / count;
    }
    Ok((sum / count, grad))
}
