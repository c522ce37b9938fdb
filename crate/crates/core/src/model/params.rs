use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{self, BatchInput};
use super::{ModelConfig, ModelError};
use crate::autodiff::{Graph, Mode, Tensor, Var};

/// Name of the shared code embedding, also the output projection.
pub const EMBEDDING: &str = "embedding";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform on `[-sqrt(3 / fan_in), sqrt(3 / fan_in)]`.
    Uniform { fan_in: usize },
    /// As `Uniform`, with row 0 (padding) pinned to zero.
    Embedding { fan_in: usize },
    Ones,
    Zeros,
}

/// All trainable arrays, in creation order. The order is part of the
/// checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ModelParameters {
    pub(crate) fn empty() -> Self {
        ModelParameters {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub(crate) fn push(&mut self, name: &str, t: Tensor) -> Result<usize, ModelError> {
        if self.index.contains_key(name) {
            return Err(ModelError::Config(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(self.names.len() - 1)
    }

    /// Draws every array from the seeded generator.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut creator = Creator {
            params: ModelParameters::empty(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        // The architecture is defined once, by running it: a forward pass on
        // a blank example creates each parameter at first use.
        let mut g = Graph::new(Mode::Eval);
        let blank = BatchInput::blank(config);
        network::logits(&mut g, config, &mut creator, &blank)?;
        Ok(creator.params)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(|i| &mut self.tensors[i])
    }

    pub fn embedding(&self) -> &Tensor {
        self.get(EMBEDDING).expect("embedding present")
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every array on `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }
}

/// Supplies parameters to the network definition.
pub(crate) trait ParamSource {
    fn param(&mut self, g: &mut Graph, name: &str, shape: &[usize], init: Init) -> Result<Var, ModelError>;
}

/// Parameters already recorded on the graph.
pub(crate) struct Bound<'a> {
    pub params: &'a ModelParameters,
    pub vars: &'a [Var],
}

impl ParamSource for Bound<'_> {
    fn param(&mut self, g: &mut Graph, name: &str, shape: &[usize], _init: Init) -> Result<Var, ModelError> {
        let i = self
            .params
            .position(name)
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))?;
        let v = self.vars[i];
        if g.value(v).shape() != shape {
            return Err(ModelError::ParameterShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: g.value(v).shape().to_vec(),
            });
        }
        Ok(v)
    }
}

struct Creator {
    params: ModelParameters,
    rng: ChaCha8Rng,
}

impl ParamSource for Creator {
    fn param(&mut self, g: &mut Graph, name: &str, shape: &[usize], init: Init) -> Result<Var, ModelError> {
        if let Some(i) = self.params.position(name) {
            // second use of a shared array
            return Ok(g.constant(self.params.tensors[i].clone()));
        }
        let t = match init {
            Init::Ones => Tensor::full(shape, 1.0),
            Init::Zeros => Tensor::zeros(shape),
            Init::Uniform { fan_in } | Init::Embedding { fan_in } => {
                let limit = (3.0 / fan_in as f64).sqrt();
                let cols = shape[shape.len() - 1];
                let rng = &mut self.rng;
                Tensor::from_fn(shape, |i| {
                    let w = rng.random_range(-limit..limit);
                    if matches!(init, Init::Embedding { .. }) && i < cols {
                        0.0
                    } else {
                        w
                    }
                })
            }
        };
        self.params.push(name, t.clone())?;
        Ok(g.constant(t))
    }
}
