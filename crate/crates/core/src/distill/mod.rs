//! Multi-task distillation: loss, optimizer, schedule and training loop.

mod check;
mod loss;
mod optim;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::AudioError;
use crate::augment::AugmentError;
use crate::models::ModelError;
use robdistill_tensor::TensorError;

pub use check::{student_gradcheck, GRADCHECK_SAMPLES};
pub use loss::{distill_loss, distill_loss_graph, enhancement_loss, total_loss, COSINE_EPS};
pub use optim::{adamw_step, clip_global_norm, lr_at, AdamWConfig, OptimizerState};
pub use trainer::{item_loss_graph, read_metrics, run_distillation, smoothed, RunOutcome, StepMetrics, TrainingData};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid distillation config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("teacher parameters changed during training (checksum {before:08x} -> {after:08x})")]
    TeacherMutated { before: u32, after: u32 },
    #[error("the speech corpus is empty")]
    NoSpeech,
    #[error("step {step}: every drawn training crop was silent")]
    SilentSpeech { step: u64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("io error on `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub lambda_cos: f64,
    /// Weight of the enhancement loss; 0 disables the head entirely.
    pub beta_enh: f64,
    pub adamw: AdamWConfig,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Training crop length in seconds.
    pub crop_s: f64,
    /// Contaminate inputs with the policy; off gives plain distillation.
    pub augment: bool,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub threads: usize,
    pub seed: u64,
    /// Record wall-clock time per step. Off keeps logs byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl DistillConfig {
    /// Full-scale recipe constants.
    pub fn full() -> Self {
        DistillConfig {
            batch_size: 24,
            total_steps: 200_000,
            warmup_steps: 14_000,
            peak_lr: 2e-4,
            lambda_cos: 1.0,
            beta_enh: 1.0,
            adamw: AdamWConfig::default(),
            grad_clip: Some(1.0),
            crop_s: 1.0,
            augment: true,
            checkpoint_every: 10_000,
            threads: 1,
            seed: 0,
            record_wall_time: false,
        }
    }

    /// Desk-scale defaults.
    pub fn toy() -> Self {
        DistillConfig {
            batch_size: 8,
            total_steps: 2000,
            warmup_steps: 140,
            peak_lr: 2e-3,
            checkpoint_every: 500,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        let bad = |m: &str| Err(DistillError::Config(m.to_string()));
        if self.warmup_steps >= self.total_steps {
            return bad("warmup_steps must be below total_steps");
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad("peak_lr must be positive");
        }
        if self.lambda_cos < 0.0 || self.beta_enh < 0.0 {
            return bad("loss weights must be nonnegative");
        }
        if self.batch_size == 0 || self.threads == 0 {
            return bad("batch_size and threads must be positive");
        }
        if !(self.crop_s > 0.0) {
            return bad("crop_s must be positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        lr_at(step, self.warmup_steps, self.total_steps, self.peak_lr)
    }
}
