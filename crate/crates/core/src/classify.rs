//! Sim-to-real transfer experiment: train an object classifier on simulated
//! (or adapted) tactile images and test it on real ones.
//!
//! The backbone is a small strided convnet trained from scratch. The head is
//! two dense → batch norm → ELU blocks and a softmax output layer.

use std::path::Path;

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tacgap_nn::activation::{elu, elu_backward, relu, relu_backward};
use tacgap_nn::conv::Conv2dCache;
use tacgap_nn::init::fill_he_normal;
use tacgap_nn::norm::BatchNormCache;
use tacgap_nn::param::join;
use tacgap_nn::{Adam, AdamConfig, BatchNorm1d, Conv2d, Linear, Module, Param};

use crate::data::{load_dataset, DatasetManifest, SamplePair, Split};
use crate::error::{ensure, Error, Result};
use crate::eval::adapt_all;
use crate::image::TactileImage;
use crate::models::{stack, Generator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Output channels of the stride-2 backbone convolutions.
    pub backbone_channels: Vec<usize>,
    pub head_widths: Vec<usize>,
    /// Number of classes; `None` takes it from the dataset.
    pub classes: Option<usize>,
    pub epochs: usize,
    pub repeats: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            backbone_channels: vec![16, 32, 32, 32],
            head_widths: vec![256, 128],
            classes: None,
            epochs: 30,
            repeats: 10,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.backbone_channels.is_empty(), Config, "backbone needs at least one convolution");
        ensure!(self.backbone_channels.iter().chain(&self.head_widths).all(|c| *c > 0), Config, "layer widths must be positive");
        if let Some(k) = self.classes {
            ensure!(k >= 2, Config, "classifier needs at least 2 classes, got {k}");
        }
        ensure!(self.epochs >= 1, Config, "epochs must be >= 1");
        ensure!(self.repeats >= 1, Config, "repeats must be >= 1");
        ensure!(self.batch_size >= 2, Config, "batch size must be >= 2 for batch normalisation");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), Config, "learning rate must be positive");
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

struct HeadBlock {
    linear: Linear,
    norm: BatchNorm1d,
}

pub struct Classifier {
    convs: Vec<Conv2d>,
    head: Vec<HeadBlock>,
    out: Linear,
    input: (usize, usize, usize),
}

pub struct ClassifierCache {
    convs: Vec<(Conv2dCache, Array4<f32>)>,
    flat_dims: (usize, usize, usize, usize),
    head: Vec<(Array2<f32>, BatchNormCache, Array2<f32>)>,
    out_input: Array2<f32>,
    probs: Array2<f32>,
}

impl ClassifierCache {
    pub fn probs(&self) -> &Array2<f32> {
        &self.probs
    }
}

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f32>) -> Array2<f32> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

impl Classifier {
    /// Builds a classifier for `channels × height × width` inputs with He
    /// initialisation throughout.
    pub fn new<R: Rng + ?Sized>(cfg: &ClassifierConfig, input: (usize, usize, usize), classes: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        ensure!(classes >= 2, Config, "classifier needs at least 2 classes, got {classes}");
        if let Some(k) = cfg.classes {
            ensure!(k == classes, Config, "configured for {k} classes but the data has {classes}");
        }
        let (mut c, mut h, mut w) = input;
        let mut convs = Vec::new();
        for &out in &cfg.backbone_channels {
            let mut conv = Conv2d::new(c, out, 4, 2, 1, true);
            (h, w) = conv
                .out_dims(h, w)
                .filter(|(a, b)| *a > 0 && *b > 0)
                .ok_or_else(|| Error::Config(format!("{}x{} input is too small for the backbone", input.1, input.2)))?;
            fill_he_normal(&mut conv.weight.value, c * 16, rng);
            convs.push(conv);
            c = out;
        }
        let mut width = c * h * w;
        let mut head = Vec::new();
        for &units in &cfg.head_widths {
            let mut linear = Linear::new(width, units);
            linear.init_he(rng);
            head.push(HeadBlock { linear, norm: BatchNorm1d::new(units) });
            width = units;
        }
        let mut out = Linear::new(width, classes);
        out.init_he(rng);
        Ok(Self { convs, head, out, input })
    }

    pub fn classes(&self) -> usize {
        self.out.out_features
    }

    /// Forward pass; `training` selects batch statistics in the norms.
    pub fn forward(&self, x: &Array4<f32>, training: bool) -> Result<ClassifierCache> {
        let d = x.dim();
        ensure!(
            (d.1, d.2, d.3) == self.input,
            Validation,
            "classifier input is {:?}, expected {:?}",
            (d.1, d.2, d.3),
            self.input
        );
        ensure!(!training || d.0 >= 2, Validation, "training batches need at least 2 samples");
        let mut h = x.clone();
        let mut convs = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (y, cache) = conv.forward(&h);
            let y = relu(&y);
            convs.push((cache, y.clone()));
            h = y;
        }
        let flat_dims = h.dim();
        let n = flat_dims.0;
        let mut z = h.into_shape_with_order((n, flat_dims.1 * flat_dims.2 * flat_dims.3)).expect("contiguous").to_owned();
        let mut head = Vec::with_capacity(self.head.len());
        for block in &self.head {
            let (a, input) = block.linear.forward(&z);
            let (b, norm_cache) = block.norm.forward(&a, training);
            let y = elu(&b);
            head.push((input, norm_cache, y.clone()));
            z = y;
        }
        let (logits, out_input) = self.out.forward(&z);
        let probs = softmax(&logits);
        Ok(ClassifierCache { convs, flat_dims, head, out_input, probs })
    }

    pub fn predict(&self, x: &Array4<f32>) -> Result<Vec<usize>> {
        let probs = self.forward(x, false)?.probs;
        Ok(probs
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().fold((0, f32::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0)
            .collect())
    }

    /// Back-propagates mean cross-entropy against `labels`; returns the loss.
    pub fn backward(&mut self, cache: &ClassifierCache, labels: &[usize]) -> f64 {
        let n = labels.len();
        let mut dlogits = cache.probs.clone();
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            loss -= (cache.probs[[i, y]].max(1e-12) as f64).ln();
            dlogits[[i, y]] -= 1.0;
        }
        dlogits /= n as f32;
        let mut dz = self.out.backward(&cache.out_input, &dlogits, true);
        for (block, (input, norm_cache, y)) in self.head.iter_mut().zip(&cache.head).rev() {
            let db = elu_backward(y, &dz);
            let da = block.norm.backward(norm_cache, &db, true);
            dz = block.linear.backward(input, &da, true);
        }
        let (b, c, h, w) = cache.flat_dims;
        let mut dh = dz.into_shape_with_order((b, c, h, w)).expect("contiguous");
        for (conv, (conv_cache, y)) in self.convs.iter_mut().zip(&cache.convs).rev() {
            let dy = relu_backward(y, &dh);
            dh = conv.backward(conv_cache, &dy, true);
        }
        loss / n as f64
    }

    pub fn update_running_stats(&mut self, cache: &ClassifierCache) {
        for (block, (_, norm_cache, _)) in self.head.iter_mut().zip(&cache.head) {
            block.norm.update_running(norm_cache);
        }
    }

    /// Sum of all head parameters, to tell initialisations apart.
    pub fn head_checksum(&self) -> f64 {
        let mut sum = 0.0;
        let mut add = |_: &str, p: &Param| sum += p.value.iter().map(|v| *v as f64).sum::<f64>();
        for (i, block) in self.head.iter().enumerate() {
            block.linear.visit_params(&format!("head.{i}"), &mut add);
        }
        self.out.visit_params("out", &mut add);
        sum
    }
}

impl Module for Classifier {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&join(prefix, &format!("conv.{i}")), f);
        }
        for (i, b) in self.head.iter().enumerate() {
            b.linear.visit_params(&join(prefix, &format!("head.{i}.linear")), f);
            b.norm.visit_params(&join(prefix, &format!("head.{i}.norm")), f);
        }
        self.out.visit_params(&join(prefix, "out"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params_mut(&join(prefix, &format!("conv.{i}")), f);
        }
        for (i, b) in self.head.iter_mut().enumerate() {
            b.linear.visit_params_mut(&join(prefix, &format!("head.{i}.linear")), f);
            b.norm.visit_params_mut(&join(prefix, &format!("head.{i}.norm")), f);
        }
        self.out.visit_params_mut(&join(prefix, "out"), f);
    }
}

/// Labelled images for training or evaluation.
#[derive(Debug, Clone, Default)]
pub struct LabelledSet {
    pub images: Vec<TactileImage>,
    pub labels: Vec<usize>,
}

impl LabelledSet {
    pub fn new(images: Vec<TactileImage>, labels: Vec<usize>) -> Result<Self> {
        ensure!(images.len() == labels.len(), Validation, "{} images but {} labels", images.len(), labels.len());
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> (Array4<f32>, Vec<usize>) {
        let imgs: Vec<_> = idx.iter().map(|&i| &self.images[i]).collect();
        (stack(&imgs), idx.iter().map(|&i| self.labels[i]).collect())
    }
}

fn check_labels(set: &LabelledSet, classes: usize) -> Result<()> {
    if let Some(bad) = set.labels.iter().find(|l| **l >= classes) {
        return Err(Error::Validation(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Trains with Adam on mean cross-entropy; returns the mean loss per epoch.
/// A trailing batch of one sample is skipped.
pub fn train_classifier(model: &mut Classifier, data: &LabelledSet, cfg: &ClassifierConfig, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    ensure!(data.len() >= 2, Validation, "need at least 2 training samples");
    check_labels(data, model.classes())?;
    let mut opt = Adam::new(AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 });
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + epoch as u64);
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            if idx.len() < 2 {
                continue;
            }
            let (x, y) = data.batch(idx);
            model.zero_grad();
            let cache = model.forward(&x, true)?;
            let loss = model.backward(&cache, &y);
            ensure!(loss.is_finite(), Numerical, "classifier loss became non-finite in epoch {epoch}");
            model.update_running_stats(&cache);
            opt.step(model, cfg.lr as f32);
            total += loss;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok(history)
}

/// Top-1 accuracy in percent.
pub fn evaluate_accuracy(model: &Classifier, data: &LabelledSet) -> Result<f64> {
    ensure!(!data.is_empty(), Validation, "accuracy of an empty set is undefined");
    check_labels(data, model.classes())?;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(64) {
        let (x, y) = data.batch(chunk);
        correct += model.predict(&x)?.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainSource {
    Sim,
    Adapted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub seed: u64,
    /// Held-out accuracy in the training domain (sim or adapted).
    pub source_accuracy: f64,
    pub real_accuracy: f64,
    pub head_checksum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub source: TrainSource,
    pub repeats: Vec<RepeatResult>,
    pub source_mean: f64,
    pub source_std: f64,
    pub real_mean: f64,
    pub real_std: f64,
    /// `source_mean - real_mean`.
    pub drop: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl TransferResult {
    pub fn from_repeats(source: TrainSource, repeats: Vec<RepeatResult>) -> Self {
        let (source_mean, source_std) = mean_std(&repeats.iter().map(|r| r.source_accuracy).collect::<Vec<_>>());
        let (real_mean, real_std) = mean_std(&repeats.iter().map(|r| r.real_accuracy).collect::<Vec<_>>());
        Self { source, repeats, source_mean, source_std, real_mean, real_std, drop: source_mean - real_mean }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Validation(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Text table with one row per model and `Sim` / `Real` accuracy columns.
pub fn render_table(rows: &[(&str, &TransferResult)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut s = format!("{:<name_w$} | {:>15} | {:>15} | {:>7}\n", "Model", "Sim", "Real", "Drop");
    s.push_str(&format!("{}-+-{}-+-{}-+-{}\n", "-".repeat(name_w), "-".repeat(15), "-".repeat(15), "-".repeat(7)));
    for (name, r) in rows {
        s.push_str(&format!(
            "{:<name_w$} | {:>15} | {:>15} | {:>7.2}\n",
            name,
            format!("{:.2} ± {:.2}", r.source_mean, r.source_std),
            format!("{:.2} ± {:.2}", r.real_mean, r.real_std),
            r.drop
        ));
    }
    s
}

/// Builds the source-domain train and test sets and the real test set.
fn experiment_sets(
    source: TrainSource,
    samples: &[SamplePair],
    g_sr: Option<&Generator>,
) -> Result<(LabelledSet, LabelledSet, LabelledSet)> {
    let split = |s: Split| samples.iter().filter(move |p| p.meta.split == s);
    let labels = |s: Split| split(s).map(|p| p.label).collect::<Vec<_>>();
    let sims = |s: Split| split(s).map(|p| p.sim.clone()).collect::<Vec<_>>();
    let mut real = Vec::new();
    for p in split(Split::Test) {
        let img = p.real.as_ref().ok_or_else(|| Error::Config(format!("sample `{}` has no real image to test on", p.id)))?;
        real.push(img.clone());
    }
    ensure!(!real.is_empty(), Config, "no real test images");
    let (train_imgs, test_imgs) = match source {
        TrainSource::Sim => (sims(Split::Train), sims(Split::Test)),
        TrainSource::Adapted => {
            let g = g_sr.ok_or_else(|| Error::Config("adapted training needs a trained sim-to-real generator".into()))?;
            (adapt_all(g, &sims(Split::Train))?, adapt_all(g, &sims(Split::Test))?)
        }
    };
    Ok((
        LabelledSet::new(train_imgs, labels(Split::Train))?,
        LabelledSet::new(test_imgs, labels(Split::Test))?,
        LabelledSet::new(real, labels(Split::Test))?,
    ))
}

/// Runs `cfg.repeats` train/test repeats with seeds `cfg.seed + r`.
pub fn run_transfer(
    source: TrainSource,
    samples: &[SamplePair],
    classes: usize,
    g_sr: Option<&Generator>,
    cfg: &ClassifierConfig,
) -> Result<TransferResult> {
    cfg.validate()?;
    let (train, source_test, real_test) = experiment_sets(source, samples, g_sr)?;
    let first = train.images.first().ok_or_else(|| Error::Validation("no training images".into()))?;
    let dims = first.data().dim();
    let mut repeats = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let seed = cfg.seed + r as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Classifier::new(cfg, dims, classes, &mut rng)?;
        let head_checksum = model.head_checksum();
        train_classifier(&mut model, &train, cfg, seed)?;
        repeats.push(RepeatResult {
            seed,
            source_accuracy: evaluate_accuracy(&model, &source_test)?,
            real_accuracy: evaluate_accuracy(&model, &real_test)?,
            head_checksum,
        });
    }
    Ok(TransferResult::from_repeats(source, repeats))
}

pub fn sim2real_experiment(
    source: TrainSource,
    manifest: &DatasetManifest,
    g_sr: Option<&Generator>,
    cfg: &ClassifierConfig,
) -> Result<TransferResult> {
    cfg.validate()?;
    if source == TrainSource::Adapted {
        ensure!(g_sr.is_some(), Config, "adapted training needs a trained sim-to-real generator");
    }
    if let Some(k) = cfg.classes {
        ensure!(k == manifest.num_classes(), Config, "configured for {k} classes but the manifest has {}", manifest.num_classes());
    }
    for s in &manifest.split(Split::Test).samples {
        ensure!(s.real.is_some(), Config, "test sample `{}` has no real image", s.id);
    }
    let samples = load_dataset(manifest)?;
    run_transfer(source, &samples, manifest.num_classes(), g_sr, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_sample, SynthConfig};
    use ndarray::Array3;

    fn small_cfg() -> ClassifierConfig {
        ClassifierConfig { backbone_channels: vec![4, 8], head_widths: vec![16, 8], epochs: 5, repeats: 2, batch_size: 8, ..Default::default() }
    }

    /// Class `k` is a bright square in quadrant `k`, plus noise.
    fn separable(n: usize, seed: u64) -> LabelledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let k = i % 4;
            let (r0, c0) = ((k / 2) * 8, (k % 2) * 8);
            let data = Array3::from_shape_fn((3, 16, 16), |(_, r, c)| {
                let inside = (r0..r0 + 8).contains(&r) && (c0..c0 + 8).contains(&c);
                (if inside { 0.6 } else { -0.6 }) + 0.2 * (rng.random::<f32>() - 0.5)
            });
            images.push(TactileImage::new(data).unwrap());
            labels.push(k);
        }
        LabelledSet::new(images, labels).unwrap()
    }

    #[test]
    fn probabilities_sum_to_one() {
        let cfg = small_cfg();
        let model = Classifier::new(&cfg, (3, 16, 16), 21, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(model.classes(), 21);
        let data = separable(5, 1);
        let (x, _) = data.batch(&[0, 1, 2, 3, 4]);
        let cache = model.forward(&x, false).unwrap();
        assert_eq!(cache.probs().dim(), (5, 21));
        for row in cache.probs().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-5);
        }
        let shapes = model.param_shapes();
        let get = |n: &str| shapes.iter().find(|(k, _)| k == n).unwrap().1.clone();
        assert_eq!(get("head.0.linear.weight"), vec![16, 8 * 4 * 4]);
        assert_eq!(get("head.1.linear.weight"), vec![8, 16]);
        assert_eq!(get("out.weight"), vec![21, 8]);
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let cfg = ClassifierConfig { classes: Some(4), ..small_cfg() };
        assert!(matches!(Classifier::new(&cfg, (3, 16, 16), 5, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Config(_))));
    }

    #[test]
    fn overfits_small_set() {
        let cfg = ClassifierConfig { epochs: 40, ..small_cfg() };
        let data = separable(32, 2);
        let mut model = Classifier::new(&cfg, (3, 16, 16), 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        train_classifier(&mut model, &data, &cfg, 3).unwrap();
        assert_eq!(evaluate_accuracy(&model, &data).unwrap(), 100.0);
    }

    #[test]
    fn loss_decreases_within_first_epoch() {
        let cfg = ClassifierConfig { epochs: 1, ..small_cfg() };
        let data = separable(64, 4);
        let mut model = Classifier::new(&cfg, (3, 16, 16), 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let mut opt = Adam::new(AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 });
        let idx: Vec<usize> = (0..64).collect();
        let mut losses = Vec::new();
        for chunk in idx.chunks(8) {
            let (x, y) = data.batch(chunk);
            model.zero_grad();
            let cache = model.forward(&x, true).unwrap();
            losses.push(model.backward(&cache, &y));
            opt.step(&mut model, 1e-3);
        }
        let first: f64 = losses[..2].iter().sum();
        let last: f64 = losses[losses.len() - 2..].iter().sum();
        assert!(last < first, "{losses:?}");
    }

    #[test]
    fn fixed_seed_reproduces_and_seeds_differ() {
        let cfg = small_cfg();
        let data = separable(24, 6);
        let run = |seed| {
            let mut m = Classifier::new(&cfg, (3, 16, 16), 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let c = m.head_checksum();
            let h = train_classifier(&mut m, &data, &cfg, seed).unwrap();
            (c, h, m.named_values(""))
        };
        let (a, b, c) = (run(1), run(1), run(2));
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn accuracy_oracles() {
        let cfg = small_cfg();
        let data = separable(40, 7);
        let model = Classifier::new(&cfg, (3, 16, 16), 4, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let acc = evaluate_accuracy(&model, &data).unwrap();
        // Counting oracle.
        let (x, y) = data.batch(&(0..40).collect::<Vec<_>>());
        let pred = model.predict(&x).unwrap();
        let expected = 100.0 * pred.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / 40.0;
        assert_eq!(acc, expected);
        // Order invariance.
        let mut order: Vec<usize> = (0..40).collect();
        order.reverse();
        let shuffled = LabelledSet::new(order.iter().map(|&i| data.images[i].clone()).collect(), order.iter().map(|&i| data.labels[i]).collect()).unwrap();
        assert_eq!(evaluate_accuracy(&model, &shuffled).unwrap(), acc);
        // A predictor that always answers one class scores 100/K on balanced data.
        let distinct: std::collections::BTreeSet<_> = pred.iter().collect();
        if distinct.len() == 1 {
            assert_eq!(acc, 25.0);
        }
        assert!(evaluate_accuracy(&model, &LabelledSet::default()).is_err());
    }

    #[test]
    fn drop_and_std() {
        let reps = vec![
            RepeatResult { seed: 0, source_accuracy: 90.0, real_accuracy: 50.0, head_checksum: 0.0 },
            RepeatResult { seed: 1, source_accuracy: 94.0, real_accuracy: 56.0, head_checksum: 1.0 },
        ];
        let r = TransferResult::from_repeats(TrainSource::Sim, reps);
        assert_eq!(r.source_mean, 92.0);
        assert_eq!(r.real_mean, 53.0);
        assert_eq!(r.drop, r.source_mean - r.real_mean);
        assert!((r.real_std - 18f64.sqrt()).abs() < 1e-12);
        let table = render_table(&[("Direct", &r)]);
        let header = table.lines().next().unwrap();
        assert!(header.contains("Model") && header.contains("Sim") && header.contains("Real"));
        assert!(table.contains("53.00 ± 4.24"));
    }

    #[test]
    fn adapted_mode_requires_generator_and_real_tests() {
        let sc = SynthConfig { resolution: 16, ..Default::default() };
        let mut samples: Vec<_> = (0..20).map(|i| synth_sample(&sc, i).unwrap()).collect();
        let cfg = ClassifierConfig { repeats: 1, epochs: 1, ..small_cfg() };
        assert!(matches!(run_transfer(TrainSource::Adapted, &samples, 4, None, &cfg), Err(Error::Config(_))));
        let r = run_transfer(TrainSource::Sim, &samples, 4, None, &cfg).unwrap();
        assert_eq!(r.repeats.len(), 1);
        for s in &mut samples {
            s.real = None;
        }
        assert!(matches!(run_transfer(TrainSource::Sim, &samples, 4, None, &cfg), Err(Error::Config(_))));
    }
}
