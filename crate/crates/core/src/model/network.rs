//! The network definition.
//!
//! ```text
//! embed (tied code embedding + demographic projections, broadcast to every cell)
//!   -> temporal blocks, one per dilation
//!   -> inception block 1 x n1 -> inception pool
//!   -> inception block 2 x n2 -> inception pool
//!   -> inception block 3 x n3
//!   -> max pool over the whole grid -> dense -> logits against embedding rows 1..=V
//! ```
//!
//! Branch layout of the inception blocks (q = C/4, e = C/8, all convs
//! same-padded with bias and relu):
//!
//! | block | b0    | b1                          | b2                                   | b3            |
//! |-------|-------|-----------------------------|--------------------------------------|---------------|
//! | 1     | 1x1 q | 1x1 q, 3x3 q                | 1x1 q, 3x3 q, 3x3 q                  | avg 3x3, 1x1 q |
//! | 2     | 1x1 q | 1x1 q, 1x3 q, 3x1 q         | 1x1 q, 3x1 q, 1x3 q, 3x1 q, 1x3 q    | avg 3x3, 1x1 q |
//! | 3     | 1x1 q | 1x1 q, (1x3 e \| 3x1 e)     | 1x1 q, 3x3 q, (1x3 e \| 3x1 e)       | avg 3x3, 1x1 q |
//!
//! Each block computes `layer_norm(x + dropout(concat(b0..b3)))`. A pooling
//! stage concatenates a 1x3 stride-(1,2) max pool of the input with a 1x3
//! stride-(1,2) convolution supplying the extra channels.

use super::params::{Init, ParamSource, EMBEDDING};
use super::{ModelConfig, ModelError};
use crate::autodiff::{ConvSpec, Graph, Padding, Tensor, Var};
use crate::certificate::{
    encode_demographics, encode_grid, Certificate, CodeGrid, Demographics, AGE_CLASSES, GENDER_STATES, LINES,
};
use crate::icd10::Vocabulary;

/// One encoded certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub grid: CodeGrid,
    pub demo: Demographics,
}

impl Example {
    /// Encodes a certificate; `year_override` replaces the year of death.
    pub fn encode(
        cert: &Certificate,
        vocab: &Vocabulary,
        width: usize,
        year_override: Option<u16>,
    ) -> Result<Self, ModelError> {
        let mut demo = cert.demo;
        if let Some(y) = year_override {
            demo.year = y;
        }
        Ok(Example {
            grid: encode_grid(&cert.chain, vocab, width)?,
            demo,
        })
    }
}

/// A batch in network layout: `[N, 6, W]` cell indices and one-hot rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInput {
    pub n: usize,
    pub width: usize,
    pub cells: Vec<u32>,
    pub gender: Tensor,
    pub age: Tensor,
    pub year: Tensor,
}

impl BatchInput {
    pub fn new<'a>(examples: impl IntoIterator<Item = &'a Example>, config: &ModelConfig) -> Result<Self, ModelError> {
        let mut cells = Vec::new();
        let (mut gender, mut age, mut year) = (Vec::new(), Vec::new(), Vec::new());
        let mut width = None;
        let mut n = 0;
        for ex in examples {
            let w = *width.get_or_insert(ex.grid.width());
            if w != ex.grid.width() {
                return Err(ModelError::Input(format!(
                    "grids of width {w} and {} in one batch",
                    ex.grid.width()
                )));
            }
            cells.extend_from_slice(ex.grid.cells());
            let oh = encode_demographics(&ex.demo, config.years())?;
            gender.extend(oh.gender);
            age.extend(oh.age);
            year.extend(oh.year);
            n += 1;
        }
        let width = width.ok_or_else(|| ModelError::Input("empty batch".into()))?;
        if width < 7 {
            return Err(ModelError::Input(format!("grid width {width} is below the minimum of 7")));
        }
        Ok(BatchInput {
            n,
            width,
            cells,
            gender: Tensor::new(&[n, GENDER_STATES], gender)?,
            age: Tensor::new(&[n, AGE_CLASSES], age)?,
            year: Tensor::new(&[n, config.year_states], year)?,
        })
    }

    /// A single all-padding example.
    pub(crate) fn blank(config: &ModelConfig) -> Self {
        let one_hot = |n: usize| Tensor::from_fn(&[1, n], |i| if i == 0 { 1.0 } else { 0.0 });
        BatchInput {
            n: 1,
            width: config.width,
            cells: vec![0; LINES * config.width],
            gender: one_hot(GENDER_STATES),
            age: one_hot(AGE_CLASSES),
            year: one_hot(config.year_states),
        }
    }
}

/// Shapes of the main intermediate tensors, in pipeline order.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

struct Net<'a, P: ParamSource> {
    g: &'a mut Graph,
    p: &'a mut P,
    cfg: &'a ModelConfig,
    layer: u64,
    trace: Option<&'a mut ShapeTrace>,
}

impl<P: ParamSource> Net<'_, P> {
    fn record(&mut self, stage: &str, x: Var) {
        let shape = self.g.value(x).shape().to_vec();
        if let Some(t) = self.trace.as_deref_mut() {
            t.push((stage.to_string(), shape));
        }
    }

    fn channels(&self, x: Var) -> usize {
        *self.g.value(x).shape().last().expect("rank >= 1")
    }

    fn conv(&mut self, x: Var, name: &str, k: (usize, usize), cout: usize, spec: ConvSpec, relu: bool) -> Result<Var, ModelError> {
        let cin = self.channels(x);
        let kernel = self.p.param(
            self.g,
            &format!("{name}.kernel"),
            &[k.0, k.1, cin, cout],
            Init::Uniform { fan_in: k.0 * k.1 * cin },
        )?;
        let bias = self.p.param(self.g, &format!("{name}.bias"), &[cout], Init::Zeros)?;
        let y = self.g.conv2d(x, kernel, spec)?;
        let y = self.g.add_bias(y, bias)?;
        Ok(if relu { self.g.relu(y) } else { y })
    }

    /// Same-padded, relu-activated convolutions applied in sequence.
    fn tower(&mut self, mut x: Var, name: &str, kernels: &[(usize, usize)], cout: usize) -> Result<Var, ModelError> {
        for (i, &k) in kernels.iter().enumerate() {
            x = self.conv(x, &format!("{name}.conv{i}"), k, cout, ConvSpec::same(), true)?;
        }
        Ok(x)
    }

    /// Parallel 1x3 and 3x1 convolutions, concatenated.
    fn split(&mut self, x: Var, name: &str, cout: usize) -> Result<Var, ModelError> {
        let a = self.conv(x, &format!("{name}.split_w"), (1, 3), cout, ConvSpec::same(), true)?;
        let b = self.conv(x, &format!("{name}.split_h"), (3, 1), cout, ConvSpec::same(), true)?;
        Ok(self.g.concat(&[a, b], 3)?)
    }

    fn pool_branch(&mut self, x: Var, name: &str, cout: usize) -> Result<Var, ModelError> {
        let a = self.g.avgpool2d(x, (3, 3), (1, 1), Padding::Same)?;
        self.tower(a, name, &[(1, 1)], cout)
    }

    fn norm(&mut self, x: Var, name: &str) -> Result<Var, ModelError> {
        let c = self.channels(x);
        let gain = self.p.param(self.g, &format!("{name}.gain"), &[c], Init::Ones)?;
        let bias = self.p.param(self.g, &format!("{name}.bias"), &[c], Init::Zeros)?;
        Ok(self.g.layer_norm(x, gain, bias, self.cfg.ln_eps)?)
    }

    fn dropout(&mut self, x: Var) -> Result<Var, ModelError> {
        self.layer += 1;
        Ok(self.g.dropout(x, self.cfg.dropout_rate, self.layer)?)
    }

    fn residual(&mut self, x: Var, update: Var, name: &str) -> Result<Var, ModelError> {
        let d = self.dropout(update)?;
        let s = self.g.add(x, d)?;
        self.norm(s, &format!("{name}.norm"))
    }

    fn embed(&mut self, batch: &BatchInput) -> Result<Var, ModelError> {
        let (v, d) = (self.cfg.vocab_size, self.cfg.d_model);
        let table = self.p.param(self.g, EMBEDDING, &[v + 1, d], Init::Embedding { fan_in: v })?;
        let x = self.g.embed_gather(table, &batch.cells, &[batch.n, LINES, batch.width])?;
        let mut demo = None;
        for (name, onehot) in [("demo.gender", &batch.gender), ("demo.age", &batch.age), ("demo.year", &batch.year)] {
            let rows = onehot.shape()[1];
            // same scale as the code embedding
            let proj = self.p.param(self.g, name, &[rows, d], Init::Uniform { fan_in: v })?;
            let oh = self.g.constant(onehot.clone());
            let e = self.g.matmul(oh, proj)?;
            demo = Some(match demo {
                None => e,
                Some(acc) => self.g.add(acc, e)?,
            });
        }
        let demo = demo.expect("three projections");
        Ok(self.g.add_broadcast(x, demo)?)
    }

    fn temporal(&mut self, x: Var, i: usize, dilation: usize) -> Result<Var, ModelError> {
        let c = self.channels(x);
        let name = format!("temporal.{i}");
        let spec = ConvSpec::same().with_dilation(1, dilation);
        let k = (1, self.cfg.temporal_kernel);
        let h = self.conv(x, &format!("{name}.conv1"), k, c, spec, true)?;
        let h = self.conv(h, &format!("{name}.conv2"), k, c, spec, false)?;
        self.residual(x, h, &name)
    }

    fn inception(&mut self, x: Var, stage: usize, i: usize) -> Result<Var, ModelError> {
        let c = self.channels(x);
        let (q, e) = (c / 4, c / 8);
        let name = format!("stage{stage}.{i}");
        let b = |j: usize| format!("{name}.b{j}");
        let b0 = self.tower(x, &b(0), &[(1, 1)], q)?;
        let b3 = self.pool_branch(x, &b(3), q)?;
        let (b1, b2) = match stage {
            1 => (
                self.tower(x, &b(1), &[(1, 1), (3, 3)], q)?,
                self.tower(x, &b(2), &[(1, 1), (3, 3), (3, 3)], q)?,
            ),
            2 => (
                self.tower(x, &b(1), &[(1, 1), (1, 3), (3, 1)], q)?,
                self.tower(x, &b(2), &[(1, 1), (3, 1), (1, 3), (3, 1), (1, 3)], q)?,
            ),
            _ => {
                let t1 = self.tower(x, &b(1), &[(1, 1)], q)?;
                let t2 = self.tower(x, &b(2), &[(1, 1), (3, 3)], q)?;
                (self.split(t1, &b(1), e)?, self.split(t2, &b(2), e)?)
            }
        };
        let cat = self.g.concat(&[b0, b1, b2, b3], 3)?;
        self.residual(x, cat, &name)
    }

    fn reduce(&mut self, x: Var, stage: usize, cout: usize) -> Result<Var, ModelError> {
        let c = self.channels(x);
        let pooled = self.g.maxpool2d(x, (1, 3), (1, 2), Padding::Valid)?;
        if cout == c {
            return Ok(pooled);
        }
        let spec = ConvSpec::valid().with_stride(1, 2);
        let conv = self.conv(x, &format!("pool{stage}.conv"), (1, 3), cout - c, spec, true)?;
        Ok(self.g.concat(&[pooled, conv], 3)?)
    }

    fn run(&mut self, batch: &BatchInput) -> Result<Var, ModelError> {
        let cfg = self.cfg;
        let mut x = self.embed(batch)?;
        self.record("embed", x);
        for (i, &d) in cfg.temporal_dilations.iter().enumerate() {
            x = self.temporal(x, i, d)?;
        }
        self.record("temporal", x);
        for stage in 1..=3 {
            for i in 0..cfg.block_counts[stage - 1] {
                x = self.inception(x, stage, i)?;
            }
            self.record(&format!("stage{stage}"), x);
            if stage < 3 {
                x = self.reduce(x, stage, cfg.stage_widths[stage])?;
                self.record(&format!("pool{stage}"), x);
            }
        }
        let s = self.g.value(x).shape().to_vec();
        let (h, w, c) = (s[1], s[2], s[3]);
        let x = self.g.maxpool2d(x, (h, w), (1, 1), Padding::Valid)?;
        self.record("full_pool", x);
        let x = self.g.reshape(x, &[batch.n, c])?;
        let weight = self.p.param(self.g, "head.weight", &[c, cfg.head_width], Init::Uniform { fan_in: c })?;
        let bias = self.p.param(self.g, "head.bias", &[cfg.head_width], Init::Zeros)?;
        let x = self.g.matmul(x, weight)?;
        let x = self.g.add_bias(x, bias)?;
        self.record("head", x);
        // Output projection: the transpose of embedding rows 1..=V.
        let table = self.p.param(
            self.g,
            EMBEDDING,
            &[cfg.vocab_size + 1, cfg.d_model],
            Init::Embedding { fan_in: cfg.vocab_size },
        )?;
        let rows = self.g.slice_rows(table, 1, cfg.vocab_size + 1)?;
        let out = self.g.transpose(rows)?;
        let logits = self.g.matmul(x, out)?;
        self.record("logits", logits);
        Ok(logits)
    }
}

pub(crate) fn logits<P: ParamSource>(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &mut P,
    batch: &BatchInput,
) -> Result<Var, ModelError> {
    logits_traced(g, cfg, p, batch, None)
}

pub(crate) fn logits_traced<P: ParamSource>(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &mut P,
    batch: &BatchInput,
    trace: Option<&mut ShapeTrace>,
) -> Result<Var, ModelError> {
    let mut net = Net {
        g,
        p,
        cfg,
        layer: 0,
        trace,
    };
    net.run(batch)
}

/// A single residual or pooling unit of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Temporal { index: usize, dilation: usize },
    Inception { stage: usize, index: usize },
    Pool { stage: usize },
}

/// Applies one block to `x` with parameters bound to `vars`.
pub fn apply_block(
    g: &mut Graph,
    cfg: &ModelConfig,
    params: &super::ModelParameters,
    vars: &[Var],
    block: Block,
    x: Var,
) -> Result<Var, ModelError> {
    let mut src = super::params::Bound { params, vars };
    let mut net = Net {
        g,
        p: &mut src,
        cfg,
        layer: 0,
        trace: None,
    };
    match block {
        Block::Temporal { index, dilation } => net.temporal(x, index, dilation),
        Block::Inception { stage, index } => net.inception(x, stage, index),
        Block::Pool { stage } => net.reduce(x, stage, cfg.stage_widths[stage]),
    }
}

/// The embedded input grid, `[N, 6, W, d_model]`.
pub fn embed_inputs(
    g: &mut Graph,
    cfg: &ModelConfig,
    params: &super::ModelParameters,
    vars: &[Var],
    batch: &BatchInput,
) -> Result<Var, ModelError> {
    let mut src = super::params::Bound { params, vars };
    let mut net = Net {
        g,
        p: &mut src,
        cfg,
        layer: 0,
        trace: None,
    };
    net.embed(batch)
}
