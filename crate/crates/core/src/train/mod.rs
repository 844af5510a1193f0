//! Optimization: the transducer loss minimized with Adam under a
//! warmup-then-decay schedule, validation by corpus CER, checkpointing.

mod metrics;
mod optim;
mod run;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use metrics::{cer, edit_distance, CorpusCer};
pub use optim::{adam_step, adam_update, lr_at, OptState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use run::{
    derive_seed, evaluate, prepare_examples, read_metrics, train_run, write_metrics, EpochMetrics, Example, TrainData,
    TrainOutcome, BEST_CHECKPOINT, METRICS_FILE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Global-norm gradient clip; `null` disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip_norm: Option<f64>,
    #[serde(default)]
    pub augment_strength: f64,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Threads for per-sample forward/backward. Results do not depend on it.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Record elapsed time in the metrics log; when false the column is 0 so
    /// logs from identical runs compare equal byte for byte.
    #[serde(default = "default_true")]
    pub log_wall_time: bool,
}

fn default_warmup() -> usize {
    1
}

fn default_clip() -> Option<f64> {
    Some(5.0)
}

fn default_workers() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 30,
            base_lr: 2e-4,
            warmup_epochs: default_warmup(),
            seed: 0,
            grad_clip_norm: default_clip(),
            augment_strength: 0.0,
            checkpoint_dir: None,
            workers: default_workers(),
            log_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::config("warmup_epochs cannot exceed epochs"));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::config(format!("grad_clip_norm must be positive, got {c}")));
            }
        }
        if !(self.augment_strength >= 0.0 && self.augment_strength.is_finite()) {
            return Err(Error::config("augment_strength must be ≥ 0"));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, train_len: usize) -> usize {
        train_len.div_ceil(self.batch_size).max(1)
    }
}
