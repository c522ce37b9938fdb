//! Optimizer, learning-rate schedule, gradient clipping and the training loop.

mod adam;
mod clip;
mod schedule;
mod trainer;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use clip::{clip_global_norm, global_norm, ClipOutcome};
pub use schedule::{lr_at, ScheduleConfig};
pub use trainer::{
    accuracy, smoothed_target_entropy, train, write_history, LabeledSet, StepRecord, TrainConfig, Trainer,
};

use crate::autodiff::AutodiffError;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("gradient of {0} is not finite")]
    NonFiniteGradient(String),
    #[error("step {step}: loss is not finite ({detail})")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("step {step}: loss {loss} is below the smoothed-target entropy {bound}")]
    LossBelowBound { step: u64, loss: f64, bound: f64 },
    #[error("dataset: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
