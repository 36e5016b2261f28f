//! The training loop over a dataset, with CSV logging, periodic
//! checkpoints and exact resumption.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{resume_checkpoint, save_checkpoint};
use super::{step_rng, stream_rng, train_step, Batch, Pairing, TrainConfig, TrainState, EPOCH_STREAM_BASE};
use crate::data::{augment_pair, load_dataset, DatasetManifest, SamplePair, Split};
use crate::error::{ensure, Error, Result};
use crate::losses::{background_batch, LossReport};
use crate::models::stack;

pub const LOG_HEADER: &str = "step,epoch,gan_g,gan_d,cycle,identity,mask,total";
pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const LOG_FILE: &str = "log.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// One row of the training log; `step` counts completed steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub gan_g: f64,
    pub gan_d: f64,
    pub cycle: f64,
    pub identity: f64,
    pub mask: f64,
    pub total: f64,
}

impl LogRow {
    pub fn new(step: usize, epoch: usize, r: &LossReport) -> Self {
        Self {
            step,
            epoch,
            gan_g: r.gan_g,
            gan_d: r.gan_d,
            cycle: r.cycle,
            identity: r.identity,
            mask: r.mask,
            total: r.total,
        }
    }
}

/// Drives training over an in-memory training set.
pub struct Trainer {
    cfg: TrainConfig,
    samples: Vec<SamplePair>,
    real_sources: Vec<usize>,
    state: TrainState,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, samples: Vec<SamplePair>) -> Result<Self> {
        let state = TrainState::new(&cfg)?;
        Self::with_state(cfg, samples, state)
    }

    pub fn with_state(cfg: TrainConfig, samples: Vec<SamplePair>, state: TrainState) -> Result<Self> {
        cfg.validate()?;
        ensure!(!samples.is_empty(), Validation, "no training samples");
        let n = cfg.resolution();
        for s in &samples {
            ensure!(
                s.dims() == (n, n),
                Config,
                "sample `{}` is {:?} but the networks expect {n}x{n}",
                s.id,
                s.dims()
            );
            if cfg.pairing == Pairing::Paired {
                s.require_real()?;
            }
        }
        let real_sources: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].real.is_some()).collect();
        ensure!(!real_sources.is_empty(), Validation, "no real images available for training");
        Ok(Self { cfg, samples, real_sources, state })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples.len().div_ceil(self.cfg.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.cfg.total_steps(self.samples.len())
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    fn permutation(&self, epoch: usize, stream: u64, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(self.cfg.seed, EPOCH_STREAM_BASE + 2 * epoch as u64 + stream));
        order
    }

    /// The batch of 0-based `step`, drawing augmentation randomness from `rng`.
    pub fn batch(&self, step: usize, rng: &mut dyn rand::RngCore) -> Result<Batch> {
        let spe = self.steps_per_epoch();
        let (epoch, pos) = (step / spe, step % spe);
        let order = self.permutation(epoch, 0, self.samples.len());
        let start = pos * self.cfg.batch_size;
        let picks = &order[start..(start + self.cfg.batch_size).min(order.len())];
        let real_order = match self.cfg.pairing {
            Pairing::Paired => None,
            Pairing::Shuffled => Some(self.permutation(epoch, 1, self.real_sources.len())),
        };
        let aug = &self.cfg.augmentation;
        let mut sims = Vec::with_capacity(picks.len());
        let mut reals = Vec::with_capacity(picks.len());
        for (k, &i) in picks.iter().enumerate() {
            let sample = &self.samples[i];
            let sim_side = if aug.enabled { augment_pair(sample, aug, rng)? } else { sample.clone() };
            let real = match &real_order {
                None => sim_side.require_real()?.clone(),
                Some(ro) => {
                    let src = &self.samples[self.real_sources[ro[(start + k) % ro.len()]]];
                    let src = if aug.enabled { augment_pair(src, aug, rng)? } else { src.clone() };
                    src.require_real()?.clone()
                }
            };
            sims.push(sim_side);
            reals.push(real);
        }
        let sim_imgs: Vec<_> = sims.iter().map(|s| &s.sim).collect();
        let real_imgs: Vec<_> = reals.iter().collect();
        let masks: Vec<_> = sims.iter().map(|s| &s.mask).collect();
        Ok(Batch {
            sim: stack(&sim_imgs),
            real: stack(&real_imgs),
            background: background_batch(&masks),
            paired: self.cfg.pairing == Pairing::Paired,
        })
    }

    /// Runs the next step; returns its epoch and losses.
    pub fn step(&mut self) -> Result<(usize, LossReport)> {
        let step = self.state.step;
        ensure!(step < self.total_steps(), Validation, "training already finished after {step} steps");
        let mut rng = step_rng(self.cfg.seed, step);
        let batch = self.batch(step, &mut rng)?;
        let lr = self.cfg.optimizer.lr_at(step, self.total_steps());
        let report = train_step(&mut self.state, &batch, &self.cfg, lr, &mut rng)?;
        Ok((step / self.steps_per_epoch(), report))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Stop once this many steps are complete, even if the schedule is longer.
    pub stop_after: Option<usize>,
    /// Print a progress line every this many steps; 0 is silent.
    pub progress_every: usize,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps_run: usize,
    pub final_step: usize,
    pub total_steps: usize,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub last: Option<LossReport>,
}

fn read_log_rows(path: &Path, up_to: usize) -> Result<Vec<LogRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        let row: LogRow = row.map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
        if row.step <= up_to {
            rows.push(row);
        }
    }
    Ok(rows)
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Integrity(format!("{}: {e}", path.display()))
}

/// Trains on the training split of `manifest`, writing the effective
/// configuration, a per-step CSV log and checkpoints into `out_dir`.
pub fn train_loop(manifest: &DatasetManifest, cfg: &TrainConfig, out_dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let [h, w] = manifest.resolution;
    ensure!(
        h == cfg.resolution() && w == cfg.resolution(),
        Config,
        "dataset resolution {h}x{w} differs from network size {}",
        cfg.resolution()
    );
    let samples: Vec<SamplePair> = load_dataset(manifest)?.into_iter().filter(|s| s.meta.split == Split::Train).collect();
    let state = match &opts.resume {
        Some(path) => resume_checkpoint(path, cfg)?,
        None => TrainState::new(cfg)?,
    };
    let mut trainer = Trainer::with_state(cfg.clone(), samples, state)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config_path = out_dir.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let previous = match &opts.resume {
        Some(_) if log_path.is_file() => read_log_rows(&log_path, trainer.state().step)?,
        _ => Vec::new(),
    };
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    log.write_record(LOG_HEADER.split(',')).map_err(csv_error(&log_path))?;
    for row in &previous {
        log.serialize(row).map_err(csv_error(&log_path))?;
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let total = trainer.total_steps();
    let limit = opts.stop_after.map_or(total, |s| s.min(total));
    let mut steps_run = 0;
    let mut last = None;
    while trainer.state().step < limit {
        let (epoch, report) = trainer.step()?;
        let step = trainer.state().step;
        log.serialize(LogRow::new(step, epoch, &report)).map_err(csv_error(&log_path))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        steps_run += 1;
        last = Some(report);
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            save_checkpoint(trainer.state(), cfg, &out_dir.join(format!("checkpoint_{step:06}.safetensors")))?;
        }
        if opts.progress_every > 0 && (step % opts.progress_every == 0 || step == limit) {
            let mut err = std::io::stderr();
            let _ = writeln!(
                err,
                "step {step}/{total} epoch {epoch} gan_g {:.4} gan_d {:.4} cycle {:.4} identity {:.4} mask {:.4} total {:.4}",
                report.gan_g, report.gan_d, report.cycle, report.identity, report.mask, report.total
            );
        }
    }
    save_checkpoint(trainer.state(), cfg, &ckpt_path)?;
    Ok(RunSummary { steps_run, final_step: trainer.state().step, total_steps: total, checkpoint: ckpt_path, log: log_path, last })
}
