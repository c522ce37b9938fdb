use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::autodiff::Tensor;
use crate::model::topk_indices;

/// A point estimate with a 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for Bootstrap {
    fn default() -> Self {
        Bootstrap { resamples: 1000, seed: 0 }
    }
}

impl Bootstrap {
    pub fn estimate(&self, correct: &[bool]) -> Result<Estimate, EvalError> {
        let value = mean(correct)?;
        let (lo, hi) = bootstrap_ci(correct, self.resamples, self.seed)?;
        Ok(Estimate { value, lo, hi })
    }
}

fn mean(correct: &[bool]) -> Result<f64, EvalError> {
    if correct.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}

pub fn correctness<T: PartialEq>(preds: &[T], labels: &[T]) -> Result<Vec<bool>, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            what: "predictions and labels",
            left: preds.len(),
            right: labels.len(),
        });
    }
    Ok(preds.iter().zip(labels).map(|(p, l)| p == l).collect())
}

pub fn accuracy<T: PartialEq>(preds: &[T], labels: &[T]) -> Result<f64, EvalError> {
    mean(&correctness(preds, labels)?)
}

/// 2.5 and 97.5 percentiles (linear interpolation) of the mean over
/// `resamples` seeded draws with replacement, widened if needed so the
/// interval contains the point estimate.
pub fn bootstrap_ci(correct: &[bool], resamples: usize, seed: u64) -> Result<(f64, f64), EvalError> {
    let point = mean(correct)?;
    if resamples == 0 {
        return Err(EvalError::NoResamples);
    }
    let n = correct.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).filter(|_| correct[rng.random_range(0..n)]).count() as f64 / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (resamples - 1) as f64;
        let (i, frac) = (pos.floor() as usize, pos.fract());
        let j = (i + 1).min(resamples - 1);
        means[i] + frac * (means[j] - means[i])
    };
    let lo = quantile(0.025).clamp(0.0, 1.0).min(point);
    let hi = quantile(0.975).clamp(0.0, 1.0).max(point);
    Ok((lo, hi))
}

fn check_rows(probs: &Tensor, labels: &[u32]) -> Result<(usize, usize), EvalError> {
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
    if let Some(&label) = labels.iter().find(|&&l| l == 0 || l as usize > v) {
        return Err(EvalError::InvalidLabel { label, classes: v });
    }
    Ok((n, v))
}

fn row(probs: &Tensor, i: usize, v: usize) -> &[f64] {
    &probs.data()[i * v..(i + 1) * v]
}

/// Whether each label is among the `k` most probable classes. `probs` is
/// `[N, V]` with column `j` for vocabulary index `j + 1`.
pub fn topk_hits(probs: &Tensor, labels: &[u32], k: usize) -> Result<Vec<bool>, EvalError> {
    let (n, v) = check_rows(probs, labels)?;
    if k == 0 || k > v {
        return Err(EvalError::InvalidK { k, classes: v });
    }
    Ok((0..n)
        .map(|i| topk_indices(row(probs, i, v), k).contains(&(labels[i] as usize - 1)))
        .collect())
}

pub fn topk_accuracy(probs: &Tensor, labels: &[u32], k: usize) -> Result<f64, EvalError> {
    mean(&topk_hits(probs, labels, k)?)
}

/// For each top-1 error, whether the second most probable class is right.
pub fn second_choice_hits(probs: &Tensor, labels: &[u32]) -> Result<Vec<bool>, EvalError> {
    let (n, v) = check_rows(probs, labels)?;
    if v < 2 {
        return Err(EvalError::InvalidK { k: 2, classes: v });
    }
    let hits: Vec<bool> = (0..n)
        .filter_map(|i| {
            let top = topk_indices(row(probs, i, v), 2);
            let label = labels[i] as usize - 1;
            (top[0] != label).then_some(top[1] == label)
        })
        .collect();
    if hits.is_empty() {
        return Err(EvalError::NoErrors);
    }
    Ok(hits)
}

pub fn second_choice_accuracy_on_errors(probs: &Tensor, labels: &[u32]) -> Result<f64, EvalError> {
    mean(&second_choice_hits(probs, labels)?)
}
