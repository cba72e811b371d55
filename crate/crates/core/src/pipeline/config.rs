use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::losses::{DiscTarget, LossWeights};
use crate::numcore::optim::AdamWConfig;
use crate::pipeline::data::SynthDatasetSpec;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "EFGN_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum PruneMode {
    OneShot,
    /// `steps` equal increments, one per epoch, ending at the target amount.
    Iterative {
        steps: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneSchedule {
    /// Epochs completed before the first prune; `None` means `ceil(E / 2)`.
    pub epoch: Option<usize>,
    pub amount: f64,
    pub mode: PruneMode,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self { epoch: None, amount: 0.3, mode: PruneMode::OneShot }
    }
}

impl PruneSchedule {
    pub fn start_epoch(&self, epochs: usize) -> usize {
        self.epoch.unwrap_or(epochs.div_ceil(2))
    }

    /// Target cumulative amount to reach before training epoch `epoch`
    /// (0-based), if a prune happens there.
    pub fn amount_at(&self, epoch: usize, epochs: usize) -> Option<f64> {
        let start = self.start_epoch(epochs);
        match self.mode {
            PruneMode::OneShot => (epoch == start).then_some(self.amount),
            PruneMode::Iterative { steps } => {
                let k = epoch.checked_sub(start)? + 1;
                (k <= steps).then(|| self.amount * k as f64 / steps as f64)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub use_pruning: bool,
    pub prune: PruneSchedule,
    pub loss_weights: LossWeights,
    pub disc_target: DiscTarget,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub dataset: SynthDatasetSpec,
    pub heldout_clips: usize,
    /// Held-out evaluation every this many epochs (0 = only at the end).
    pub eval_every: usize,
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 4,
            lr_generator: 5e-4,
            lr_discriminator: 1e-3,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 1e-4,
            grad_clip: 5.0,
            seed: 0,
            use_pruning: true,
            prune: PruneSchedule::default(),
            loss_weights: LossWeights::default(),
            disc_target: DiscTarget::default(),
            generator: GeneratorConfig::desk(),
            discriminator: DiscriminatorConfig::default(),
            dataset: SynthDatasetSpec::default(),
            heldout_clips: 24,
            eval_every: 1,
            parallel: true,
        }
    }
}

impl TrainConfig {
    /// Micro networks on a handful of 10 ms clips; trains in about a second.
    pub fn tiny() -> Self {
        Self {
            epochs: 2,
            batch_size: 2,
            generator: GeneratorConfig::micro(),
            discriminator: DiscriminatorConfig::micro(),
            dataset: SynthDatasetSpec { num_clips: 6, clip_seconds: 0.01, f0_range: (500.0, 900.0), ..SynthDatasetSpec::default() },
            heldout_clips: 3,
            ..Self::default()
        }
    }

    pub fn use_depthwise(&self) -> bool {
        self.generator.use_depthwise
    }

    pub fn use_residual_attention(&self) -> bool {
        self.generator.use_residual_attention
    }

    pub fn adam(&self, lr: f64) -> AdamWConfig {
        AdamWConfig { lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }

    /// Held-out split: same recipe, disjoint seed.
    pub fn heldout_spec(&self) -> SynthDatasetSpec {
        SynthDatasetSpec { num_clips: self.heldout_clips, seed: self.dataset.seed ^ 0xA5A5_5A5A_D00D_F00D, ..self.dataset.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        for (name, lr) in [("lr_generator", self.lr_generator), ("lr_discriminator", self.lr_discriminator)] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return bad(format!("{name} must be a finite non-negative number, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("invalid optimizer moments".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive".into());
        }
        if !(0.0..1.0).contains(&self.prune.amount) {
            return bad(format!("prune amount {} outside [0, 1)", self.prune.amount));
        }
        if let PruneMode::Iterative { steps: 0 } = self.prune.mode {
            return bad("iterative pruning needs at least one step".into());
        }
        if self.heldout_clips == 0 {
            return bad("heldout_clips must be positive".into());
        }
        self.loss_weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.dataset.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON config and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        Ok(cfg)
    }
}

/// Table-II style variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Baseline,
    NoDepthwise,
    NoRes,
    NoPrune,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Baseline, Ablation::NoDepthwise, Ablation::NoRes, Ablation::NoPrune];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::NoDepthwise => "no-depthwise",
            Ablation::NoRes => "no-res",
            Ablation::NoPrune => "no-prune",
        }
    }

    /// Applies this variant's flag on top of `base` (the baseline keeps it as is).
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Ablation::Baseline => {}
            Ablation::NoDepthwise => cfg.generator.use_depthwise = false,
            Ablation::NoRes => cfg.generator.use_residual_attention = false,
            Ablation::NoPrune => cfg.use_pruning = false,
        }
        cfg
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}
