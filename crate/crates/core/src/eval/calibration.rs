use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::autodiff::Tensor;
use crate::model::topk_indices;

pub const CALIBRATION_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub correct: u64,
    pub incorrect: u64,
}

/// Histogram of top-1 confidence, split by correctness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub bins: Vec<CalibrationBin>,
    pub mean_confidence_correct: Option<f64>,
    pub mean_confidence_incorrect: Option<f64>,
}

impl Calibration {
    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.correct + b.incorrect).sum()
    }
}

/// Bins are `[k/20, (k+1)/20)`, the last one closed at 1.
pub fn calibration(probs: &Tensor, labels: &[u32]) -> Result<Calibration, EvalError> {
    let [n, v] = *probs.shape() else {
        return Err(EvalError::LengthMismatch {
            what: "probability matrix rank",
            left: probs.rank(),
            right: 2,
        });
    };
    if n != labels.len() {
        return Err(EvalError::LengthMismatch {
            what: "probability rows and labels",
            left: n,
            right: labels.len(),
        });
    }
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let mut bins: Vec<CalibrationBin> = (0..CALIBRATION_BINS)
        .map(|k| CalibrationBin {
            lo: k as f64 / CALIBRATION_BINS as f64,
            hi: (k + 1) as f64 / CALIBRATION_BINS as f64,
            correct: 0,
            incorrect: 0,
        })
        .collect();
    let (mut sum_ok, mut n_ok, mut sum_bad, mut n_bad) = (0.0, 0u64, 0.0, 0u64);
    for (i, &label) in labels.iter().enumerate() {
        if label == 0 || label as usize > v {
            return Err(EvalError::InvalidLabel { label, classes: v });
        }
        let row = &probs.data()[i * v..(i + 1) * v];
        let top = topk_indices(row, 1)[0];
        let conf = row[top];
        let k = ((conf * CALIBRATION_BINS as f64) as usize).min(CALIBRATION_BINS - 1);
        if top + 1 == label as usize {
            bins[k].correct += 1;
            sum_ok += conf;
            n_ok += 1;
        } else {
            bins[k].incorrect += 1;
            sum_bad += conf;
            n_bad += 1;
        }
    }
    Ok(Calibration {
        bins,
        mean_confidence_correct: (n_ok > 0).then(|| sum_ok / n_ok as f64),
        mean_confidence_incorrect: (n_bad > 0).then(|| sum_bad / n_bad as f64),
    })
}
