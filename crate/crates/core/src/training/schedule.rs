use serde::{Deserialize, Serialize};

use super::TrainingError;

/// Warmup then inverse-square-root decay:
/// `alpha * min(t^-0.5, t * warmup^-1.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub alpha: f64,
    pub warmup_steps: u64,
}

impl ScheduleConfig {
    pub fn paper() -> Self {
        ScheduleConfig {
            alpha: 2.0 / 512f64.sqrt(),
            warmup_steps: 16_000,
        }
    }

    /// Laptop-scale runs of a few thousand steps.
    pub fn desk() -> Self {
        ScheduleConfig::with_peak(2e-3, 200)
    }

    /// Peak learning rate, reached at `t = warmup_steps`.
    pub fn peak(&self) -> f64 {
        self.alpha / (self.warmup_steps as f64).sqrt()
    }

    /// The `alpha` giving a chosen peak learning rate.
    pub fn with_peak(peak: f64, warmup_steps: u64) -> Self {
        ScheduleConfig {
            alpha: peak * (warmup_steps as f64).sqrt(),
            warmup_steps,
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        if !(self.alpha > 0.0) || self.warmup_steps == 0 {
            return Err(TrainingError::Config(format!(
                "schedule needs alpha > 0 and warmup_steps >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn lr_at(t: u64, s: &ScheduleConfig) -> Result<f64, TrainingError> {
    if t == 0 {
        return Err(TrainingError::Schedule("the schedule is undefined at step 0; steps start at 1".into()));
    }
    let t = t as f64;
    let w = s.warmup_steps as f64;
    Ok(s.alpha * t.powf(-0.5).min(t * w.powf(-1.5)))
}
