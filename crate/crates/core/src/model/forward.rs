use rayon::prelude::*;

use super::network::{self, BatchInput, Example, ShapeTrace};
use super::params::Bound;
use super::{ModelConfig, ModelError, ModelParameters};
use crate::autodiff::{softmax_rows, Graph, Mode, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[B, V]`; column `j` scores vocabulary index `j + 1`.
    pub logits: Tensor,
    pub probabilities: Tensor,
}

impl ForwardOutput {
    pub fn rows(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.logits.shape()[1]
    }

    pub fn probability_row(&self, i: usize) -> &[f64] {
        let v = self.classes();
        &self.probabilities.data()[i * v..(i + 1) * v]
    }

    fn from_logits(logits: Tensor) -> Self {
        ForwardOutput {
            probabilities: softmax_rows(&logits),
            logits,
        }
    }

    /// Stacks outputs of consecutive chunks.
    pub fn concat(parts: Vec<ForwardOutput>) -> Option<ForwardOutput> {
        let v = parts.first()?.classes();
        let n: usize = parts.iter().map(ForwardOutput::rows).sum();
        let mut logits = Vec::with_capacity(n * v);
        let mut probs = Vec::with_capacity(n * v);
        for p in parts {
            logits.extend_from_slice(p.logits.data());
            probs.extend_from_slice(p.probabilities.data());
        }
        Some(ForwardOutput {
            logits: Tensor::new(&[n, v], logits).ok()?,
            probabilities: Tensor::new(&[n, v], probs).ok()?,
        })
    }
}

/// Records the network on `g` with parameters bound to `vars` (see
/// [`ModelParameters::bind`]) and returns the logits node.
pub fn build_logits(
    g: &mut Graph,
    config: &ModelConfig,
    params: &ModelParameters,
    vars: &[Var],
    batch: &BatchInput,
) -> Result<Var, ModelError> {
    let mut src = Bound { params, vars };
    network::logits(g, config, &mut src, batch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParameters,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = ModelParameters::init(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Eval-mode forward pass.
    pub fn forward(&self, batch: &BatchInput) -> Result<ForwardOutput, ModelError> {
        Ok(self.forward_traced(batch)?.0)
    }

    pub fn forward_traced(&self, batch: &BatchInput) -> Result<(ForwardOutput, ShapeTrace), ModelError> {
        let mut g = Graph::new(Mode::Eval);
        let vars = self.params.bind(&mut g, false);
        let mut src = Bound {
            params: &self.params,
            vars: &vars,
        };
        let mut trace = ShapeTrace::new();
        let out = network::logits_traced(&mut g, &self.config, &mut src, batch, Some(&mut trace))?;
        let logits = g.value(out).clone();
        Ok((ForwardOutput::from_logits(logits), trace))
    }

    /// Eval-mode forward over many examples in chunks of `chunk`, spread
    /// over the current rayon pool. Results do not depend on the pool size.
    pub fn predict(&self, examples: &[Example], chunk: usize) -> Result<ForwardOutput, ModelError> {
        if examples.is_empty() {
            return Err(ModelError::Input("no examples to predict".into()));
        }
        let parts = examples
            .par_chunks(chunk.max(1))
            .map(|c| self.forward(&BatchInput::new(c, &self.config)?))
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(ForwardOutput::concat(parts).expect("non-empty"))
    }
}
