use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignPolicy {
    /// Add a missing gold entity to the candidate list.
    Inject,
    /// Drop the pair with a warning.
    SkipPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?} (expected adam or sgd)"))),
        }
    }
}

/// Training hyperparameters. Every field has a default so a config file
/// only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr_initial: f64,
    pub epochs_phase1: usize,
    pub lr_decay: f64,
    pub epochs_phase2: usize,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub task2_weight: f64,
    pub variant: Variant,
    pub d_emb: usize,
    pub d_h: usize,
    pub init_scale: f64,
    pub optimizer: OptimizerKind,
    pub align_policy: AlignPolicy,
    /// Adds a cross-entropy term on the gate using the gold entity positions.
    pub gate_supervision: bool,
    pub min_count: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lr_initial: 1.0,
            epochs_phase1: 5,
            lr_decay: 0.5,
            epochs_phase2: 5,
            grad_clip: 5.0,
            batch_size: 8,
            seed: 0,
            task2_weight: 1.0,
            variant: Variant::Full,
            d_emb: 160,
            d_h: 160,
            init_scale: 0.1,
            optimizer: OptimizerKind::Sgd,
            align_policy: AlignPolicy::Inject,
            gate_supervision: false,
            min_count: 1,
        }
    }
}

impl TrainingConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_initial", self.lr_initial),
            ("lr_decay", self.lr_decay),
            ("grad_clip", self.grad_clip),
            ("init_scale", self.init_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("d_emb", self.d_emb),
            ("d_h", self.d_h),
            ("min_count", self.min_count),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.epochs_phase1 + self.epochs_phase2 == 0 {
            return Err(Error::Config("at least one epoch is required".into()));
        }
        if !(self.task2_weight >= 0.0 && self.task2_weight.is_finite()) {
            return Err(Error::Config(format!("task2_weight must be non-negative, got {}", self.task2_weight)));
        }
        Ok(())
    }

    /// Task-2 weight actually applied: zero for variants without the auxiliary task.
    pub fn effective_task2_weight(&self) -> f64 {
        if self.variant.uses_task2() {
            self.task2_weight
        } else {
            0.0
        }
    }

    /// Learning rate of a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.epochs_phase1 {
            self.lr_initial
        } else {
            self.lr_initial * self.lr_decay
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_phase1 + self.epochs_phase2
    }
}
