use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Number of updates applied so far.
    pub t: u64,
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    /// (parameter, element range) pairs that are never updated.
    pinned: Vec<(usize, Range<usize>)>,
}

impl OptimizerState {
    pub fn new(shapes: &[&[usize]], config: AdamConfig) -> Self {
        OptimizerState {
            t: 0,
            config,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            pinned: Vec::new(),
        }
    }

    /// Excludes elements `range` of parameter `param` from every update.
    pub fn pin(mut self, param: usize, range: Range<usize>) -> Self {
        self.pinned.push((param, range));
        self
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), TrainingError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainingError::Shape(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(TrainingError::Shape(format!(
                "parameter {i}: shape {:?}, gradient {:?}, moments {:?}",
                p.shape(),
                g.shape(),
                state.m[i].shape()
            )));
        }
    }
    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let pd = p.data_mut();
        let gd = g.data();
        let pinned: Vec<&Range<usize>> = state.pinned.iter().filter(|(j, _)| *j == i).map(|(_, r)| r).collect();
        for k in 0..pd.len() {
            if pinned.iter().any(|r| r.contains(&k)) {
                continue;
            }
            m[k] = beta1 * m[k] + (1.0 - beta1) * gd[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * gd[k] * gd[k];
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            pd[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
