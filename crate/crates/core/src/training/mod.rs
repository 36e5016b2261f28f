//! Cycle-consistent adversarial training of the four networks.
//!
//! A step first updates both generators on the weighted sum of adversarial,
//! cycle, identity and background-mask terms (the mask term only on the
//! S→R direction), then both discriminators on their adversarial losses with
//! fakes drawn through history buffers. All randomness of a step comes from
//! a stream derived from `(seed, step)`, so a run resumes exactly from the
//! weights, optimiser moments, buffers and step counter.

pub mod checkpoint;
pub mod config;
pub mod pool;
pub mod run;

use ndarray::{Array3, Array4};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tacgap_nn::{Adam, Module};

pub use checkpoint::{load_checkpoint, load_generator, save_checkpoint, Checkpoint};
pub use config::{OptimizerConfig, Pairing, TrainConfig};
pub use pool::ImagePool;
pub use run::{train_loop, RunOptions, RunSummary, Trainer, LOG_HEADER};

use crate::error::{Error, Result};
use crate::losses::{
    cycle_loss, discriminator_loss, generator_adversarial_loss, identity_loss, mask_loss, total_objective, LossReport,
};
use crate::models::{Discriminator, Generator};

/// Random stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const INIT_STREAM: u64 = 1;
pub(crate) const EPOCH_STREAM_BASE: u64 = 1 << 20;
pub(crate) const STEP_STREAM_BASE: u64 = 1 << 40;

/// The randomness of 0-based step `step`.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    stream_rng(seed, STEP_STREAM_BASE + step as u64)
}

/// Everything that changes during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub g_sr: Generator,
    pub g_rs: Generator,
    pub d_r: Discriminator,
    pub d_s: Discriminator,
    pub opt_g_sr: Adam,
    pub opt_g_rs: Adam,
    pub opt_d_r: Adam,
    pub opt_d_s: Adam,
    pub pool_r: ImagePool,
    pub pool_s: ImagePool,
    /// Completed steps.
    pub step: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(cfg.seed, INIT_STREAM);
        let adam = || Adam::new(cfg.optimizer.adam());
        Ok(Self {
            g_sr: Generator::new(cfg.generator.clone(), &mut rng)?,
            g_rs: Generator::new(cfg.generator.clone(), &mut rng)?,
            d_r: Discriminator::new(cfg.discriminator.clone(), &mut rng)?,
            d_s: Discriminator::new(cfg.discriminator.clone(), &mut rng)?,
            opt_g_sr: adam(),
            opt_g_rs: adam(),
            opt_d_r: adam(),
            opt_d_s: adam(),
            pool_r: ImagePool::new(cfg.pool_size),
            pool_s: ImagePool::new(cfg.pool_size),
            step: 0,
        })
    }
}

/// One training batch in network layout.
#[derive(Debug, Clone)]
pub struct Batch {
    pub sim: Array4<f32>,
    pub real: Array4<f32>,
    /// `1 − m` of the simulated samples, `[n, h, w]`.
    pub background: Array3<f32>,
    /// Whether `real[i]` is the counterpart of `sim[i]`.
    pub paired: bool,
}

/// Outputs of the generator sub-step needed by the discriminator sub-step.
pub struct GeneratorOutputs {
    pub fake_r: Array4<f32>,
    pub fake_s: Array4<f32>,
    pub report: LossReport,
}

fn scaled(g: Array4<f32>, s: f64) -> Array4<f32> {
    g * s as f32
}

fn check_report(report: &LossReport, step: usize) -> Result<()> {
    match report.first_non_finite() {
        Some(term) => Err(Error::Numerical(format!("loss term `{term}` became non-finite at step {step}"))),
        None => Ok(()),
    }
}

/// Attributes a numerical failure inside a loss to its report term.
fn in_term(term: &'static str, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numerical(msg) => Error::Numerical(format!("loss term `{term}` became non-finite at step {step}: {msg}")),
        other => other,
    }
}

fn check_weights(net: &dyn Module, name: &str, step: usize) -> Result<()> {
    if net.all_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("weights of {name} became non-finite at step {step}")))
    }
}

/// Updates both generators; discriminator weights are left untouched.
pub fn generator_step(
    state: &mut TrainState,
    batch: &Batch,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut dyn RngCore,
) -> Result<GeneratorOutputs> {
    let w = cfg.weights;
    let mode = cfg.adversarial;
    let (xs, xr) = (&batch.sim, &batch.real);
    state.g_sr.zero_grad();
    state.g_rs.zero_grad();

    let fwd_fake_r = state.g_sr.forward(xs, Some(&mut *rng));
    let fwd_rec_s = state.g_rs.forward(fwd_fake_r.output(), Some(&mut *rng));
    let fwd_fake_s = state.g_rs.forward(xr, Some(&mut *rng));
    let fwd_rec_r = state.g_sr.forward(fwd_fake_s.output(), Some(&mut *rng));
    let fwd_idt_s = state.g_rs.forward(xs, Some(&mut *rng));
    let fwd_idt_r = state.g_sr.forward(xr, Some(&mut *rng));
    let on_d_r = state.d_r.forward(fwd_fake_r.output());
    let on_d_s = state.d_s.forward(fwd_fake_s.output());

    let step = state.step;
    let (adv_sr, g_adv_sr) = generator_adversarial_loss(on_d_r.logits(), mode).map_err(in_term("gan_g", step))?;
    let (adv_rs, g_adv_rs) = generator_adversarial_loss(on_d_s.logits(), mode).map_err(in_term("gan_g", step))?;
    let (cycle, g_rec_s, g_rec_r) = cycle_loss(xs, fwd_rec_s.output(), xr, fwd_rec_r.output())?;
    let (identity, g_idt_s, g_idt_r) = identity_loss(xs, fwd_idt_s.output(), xr, fwd_idt_r.output())?;
    let alpha = w.alpha as f32;
    let mask = if batch.paired || alpha == 1.0 {
        let real = batch.paired.then_some(xr);
        Some(mask_loss(fwd_fake_r.output(), xs, real, &batch.background, alpha)?)
    } else {
        None
    };

    let mut report = LossReport {
        gan_g: (adv_sr + adv_rs) as f64,
        gan_d: 0.0,
        cycle: cycle as f64,
        identity: identity as f64,
        mask: mask.as_ref().map_or(0.0, |m| m.0 as f64),
        total: 0.0,
    };
    report.total = total_objective(&report, &w).0;
    check_report(&report, state.step)?;

    // S→R path: adversarial through D_R, cycle through G_RS, mask.
    let mut d_fake_r = Array4::<f32>::zeros(fwd_fake_r.output().raw_dim());
    if w.gan > 0.0 {
        d_fake_r += &state.d_r.backward(&on_d_r, &scaled(g_adv_sr, w.gan), false);
    }
    if w.cycle > 0.0 {
        d_fake_r += &state.g_rs.backward(&fwd_rec_s, &scaled(g_rec_s, w.cycle), true);
    }
    if let (true, Some((_, g))) = (w.mask > 0.0, mask) {
        d_fake_r += &scaled(g, w.mask);
    }
    state.g_sr.backward(&fwd_fake_r, &d_fake_r, true);

    // R→S path.
    let mut d_fake_s = Array4::<f32>::zeros(fwd_fake_s.output().raw_dim());
    if w.gan > 0.0 {
        d_fake_s += &state.d_s.backward(&on_d_s, &scaled(g_adv_rs, w.gan), false);
    }
    if w.cycle > 0.0 {
        d_fake_s += &state.g_sr.backward(&fwd_rec_r, &scaled(g_rec_r, w.cycle), true);
    }
    state.g_rs.backward(&fwd_fake_s, &d_fake_s, true);

    if w.identity > 0.0 {
        state.g_rs.backward(&fwd_idt_s, &scaled(g_idt_s, w.identity), true);
        state.g_sr.backward(&fwd_idt_r, &scaled(g_idt_r, w.identity), true);
    }

    state.opt_g_sr.step(&mut state.g_sr, lr as f32);
    state.opt_g_rs.step(&mut state.g_rs, lr as f32);
    check_weights(&state.g_sr, "G_SR", state.step)?;
    check_weights(&state.g_rs, "G_RS", state.step)?;

    Ok(GeneratorOutputs { fake_r: fwd_fake_r.output().clone(), fake_s: fwd_fake_s.output().clone(), report })
}

/// Updates both discriminators on real images and buffered fakes; returns
/// the summed discriminator loss. Generator weights are left untouched.
pub fn discriminator_step(
    state: &mut TrainState,
    batch: &Batch,
    fake_r: &Array4<f32>,
    fake_s: &Array4<f32>,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let w = cfg.weights;
    let mode = cfg.adversarial;
    state.d_r.zero_grad();
    state.d_s.zero_grad();
    let pooled_r = state.pool_r.query(fake_r, rng);
    let pooled_s = state.pool_s.query(fake_s, rng);
    let mut total = 0.0;
    for (d, opt, real, fake) in [
        (&mut state.d_r, &mut state.opt_d_r, &batch.real, &pooled_r),
        (&mut state.d_s, &mut state.opt_d_s, &batch.sim, &pooled_s),
    ] {
        let on_real = d.forward(real);
        let on_fake = d.forward(fake);
        let (loss, g_real, g_fake) =
            discriminator_loss(on_real.logits(), on_fake.logits(), mode).map_err(in_term("gan_d", state.step))?;
        total += loss as f64;
        if w.gan > 0.0 {
            d.backward(&on_real, &scaled(g_real, w.gan), true);
            d.backward(&on_fake, &scaled(g_fake, w.gan), true);
        }
        opt.step(d, lr as f32);
    }
    if !total.is_finite() {
        return Err(Error::Numerical(format!("loss term `gan_d` became non-finite at step {}", state.step)));
    }
    check_weights(&state.d_r, "D_R", state.step)?;
    check_weights(&state.d_s, "D_S", state.step)?;
    Ok(total)
}

/// One full step: generators, then discriminators. Advances `state.step`.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut dyn RngCore,
) -> Result<LossReport> {
    let out = generator_step(state, batch, cfg, lr, rng)?;
    let gan_d = discriminator_step(state, batch, &out.fake_r, &out.fake_s, cfg, lr, rng)?;
    state.step += 1;
    Ok(LossReport { gan_d, ..out.report })
}


#[cfg(test)]
mod tests {
    use super::tests_support::{tiny_batch, tiny_config};
    use super::*;
    use crate::losses::LossWeights;

    fn all_params(state: &TrainState) -> Vec<Vec<(String, ndarray::ArrayD<f32>)>> {
        vec![
            state.g_sr.named_values(""),
            state.g_rs.named_values(""),
            state.d_r.named_values(""),
            state.d_s.named_values(""),
        ]
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let mut cfg = tiny_config();
        cfg.weights = LossWeights { gan: 0.0, cycle: 0.0, identity: 0.0, mask: 0.0, alpha: 1.0 };
        let mut state = TrainState::new(&cfg).unwrap();
        let before = all_params(&state);
        let report = train_step(&mut state, &tiny_batch(1), &cfg, 2e-4, &mut step_rng(0, 0)).unwrap();
        assert_eq!(all_params(&state), before);
        assert_eq!(report.total, 0.0);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let cfg = tiny_config();
        let run = || {
            let mut state = TrainState::new(&cfg).unwrap();
            let mut reports = Vec::new();
            for s in 0..3 {
                reports.push(train_step(&mut state, &tiny_batch(s), &cfg, 2e-4, &mut step_rng(cfg.seed, s as usize)).unwrap());
            }
            (all_params(&state), reports)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mask_only_step_decreases_mask_loss() {
        let mut cfg = tiny_config();
        cfg.weights = LossWeights { gan: 0.0, cycle: 0.0, identity: 0.0, mask: 1.0, alpha: 1.0 };
        cfg.generator.dropout = 0.0;
        let batch = tiny_batch(2);
        let mut state = TrainState::new(&cfg).unwrap();
        let eval = |g: &Generator| {
            mask_loss(&g.infer(&batch.sim), &batch.sim, None, &batch.background, 1.0).unwrap().0
        };
        let before = eval(&state.g_sr);
        generator_step(&mut state, &batch, &cfg, 1e-4, &mut step_rng(0, 0)).unwrap();
        let after = eval(&state.g_sr);
        assert!(after < before, "mask loss {before} -> {after}");
    }

    #[test]
    fn sub_steps_do_not_cross_contaminate() {
        let cfg = tiny_config();
        let batch = tiny_batch(3);
        let mut state = TrainState::new(&cfg).unwrap();
        let d_before = (state.d_r.named_values(""), state.d_s.named_values(""));
        let out = generator_step(&mut state, &batch, &cfg, 2e-4, &mut step_rng(0, 0)).unwrap();
        assert_eq!((state.d_r.named_values(""), state.d_s.named_values("")), d_before);
        let g_before = (state.g_sr.named_values(""), state.g_rs.named_values(""));
        discriminator_step(&mut state, &batch, &out.fake_r, &out.fake_s, &cfg, 2e-4, &mut step_rng(0, 0)).unwrap();
        assert_eq!((state.g_sr.named_values(""), state.g_rs.named_values("")), g_before);
        assert_ne!((state.d_r.named_values(""), state.d_s.named_values("")), d_before);
    }

    #[test]
    fn non_finite_input_names_the_term() {
        let cfg = tiny_config();
        let mut batch = tiny_batch(4);
        batch.real[[0, 0, 0, 0]] = f32::NAN;
        let mut state = TrainState::new(&cfg).unwrap();
        match train_step(&mut state, &batch, &cfg, 2e-4, &mut step_rng(0, 0)) {
            Err(Error::Numerical(msg)) => assert!(msg.contains('`'), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
