//! Training configuration, read from TOML.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::AugmentationConfig;
use crate::error::{ensure, Error, Result};
use crate::losses::{AdversarialMode, LossWeights};
use crate::models::{DiscriminatorSpec, GeneratorSpec};

/// How simulated and real images are matched within a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Each simulated image meets its own real counterpart.
    #[default]
    Paired,
    /// Real images follow an independent permutation (unpaired training).
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of all steps trained at the full rate before linear decay to 0.
    pub constant_fraction: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8, constant_fraction: 0.5 }
    }
}

impl OptimizerConfig {
    /// Learning rate for 0-based `step` out of `total` steps.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let hold = (self.constant_fraction * total as f64).floor() as usize;
        if step < hold || total <= hold {
            return self.lr;
        }
        let remaining = (total - step) as f64 / (total - hold) as f64;
        self.lr * remaining.clamp(0.0, 1.0)
    }

    pub fn adam(&self) -> tacgap_nn::AdamConfig {
        tacgap_nn::AdamConfig { beta1: self.beta1 as f32, beta2: self.beta2 as f32, eps: self.eps as f32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Upper bound on total steps; 0 means epochs alone decide.
    pub max_steps: usize,
    pub batch_size: usize,
    pub pairing: Pairing,
    pub adversarial: AdversarialMode,
    /// Capacity of each fake-image history buffer; 0 disables it.
    pub pool_size: usize,
    /// Write a numbered checkpoint every this many steps; 0 only at the end.
    pub checkpoint_every: usize,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 200,
            max_steps: 0,
            batch_size: 1,
            pairing: Pairing::Paired,
            adversarial: AdversarialMode::LeastSquares,
            pool_size: 50,
            checkpoint_every: 0,
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            augmentation: AugmentationConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small networks and a short schedule for 64×64 desk-scale runs.
    pub fn desk() -> Self {
        let size = 64;
        Self {
            epochs: 13,
            max_steps: 2000,
            optimizer: OptimizerConfig { lr: 1e-3, ..Default::default() },
            generator: GeneratorSpec { size, base_filters: 8, max_filters: 64, dropout: 0.0, ..Default::default() },
            discriminator: DiscriminatorSpec { size, base_filters: 8, max_filters: 64, stride_layers: 2, ..Default::default() },
            augmentation: AugmentationConfig { enabled: false, ..Default::default() },
            ..Self::default()
        }
    }

    pub fn resolution(&self) -> usize {
        self.generator.size
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, Config, "epochs must be >= 1");
        ensure!(self.batch_size >= 1, Config, "batch size must be >= 1");
        ensure!(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite(), Config, "learning rate must be positive");
        ensure!(
            (0.0..=1.0).contains(&self.optimizer.constant_fraction),
            Config,
            "constant_fraction must lie in [0, 1]"
        );
        ensure!(
            (0.0..1.0).contains(&self.optimizer.beta1) && (0.0..1.0).contains(&self.optimizer.beta2),
            Config,
            "Adam betas must lie in [0, 1)"
        );
        self.weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        ensure!(
            self.generator.size == self.discriminator.size,
            Config,
            "generator size {} differs from discriminator size {}",
            self.generator.size,
            self.discriminator.size
        );
        ensure!(
            self.generator.channels == self.discriminator.channels,
            Config,
            "generator and discriminator channel counts differ"
        );
        if self.augmentation.enabled {
            self.augmentation.validate(self.resolution(), self.resolution())?;
            let crop = self.augmentation.crop_size;
            ensure!(crop == 0 || crop == self.resolution(), Config, "augmentation crop must equal the network size");
        }
        ensure!(
            !(self.weights.needs_real() && self.pairing == Pairing::Shuffled),
            Config,
            "mask loss with alpha < 1 requires paired training"
        );
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

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// SHA-256 of the configuration with the checkpoint cadence blanked,
    /// as lowercase hex. Checkpoints only resume under a matching hash.
    pub fn hash(&self) -> String {
        let canonical = Self { checkpoint_every: 0, ..self.clone() };
        let json = serde_json::to_string(&canonical).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Total optimisation steps for `train_samples` training images.
    pub fn total_steps(&self, train_samples: usize) -> usize {
        let per_epoch = train_samples.div_ceil(self.batch_size);
        let by_epochs = per_epoch * self.epochs;
        if self.max_steps > 0 {
            by_epochs.min(self.max_steps)
        } else {
            by_epochs
        }
    }
}
