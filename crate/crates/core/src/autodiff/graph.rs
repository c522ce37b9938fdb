use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{self, ConvSpec, Geometry, Padding};
use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A differentiable operation defined outside the engine.
pub trait CustomOp: Send {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError>;
    /// Gradient with respect to each input, given the output gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    SliceRows { x: Var, start: usize },
    Add(Var, Var),
    AddBias(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Conv2d { x: Var, k: Var, geom: Geometry },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, geom: Geometry },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    Gather { table: Var, indices: Vec<u32> },
    SoftmaxXent { logits: Var, labels: Vec<u32>, smoothing: f64, probs: Tensor },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

impl Op {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::SliceRows { .. } => "slice_rows",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Relu(_) => "relu",
            Op::Reshape(_) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool { .. } => "maxpool2d",
            Op::AvgPool { .. } => "avgpool2d",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::Gather { .. } => "embed_gather",
            Op::SoftmaxXent { .. } => "softmax_xent_smoothed",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Keys the counter-based dropout generator: one stream per
/// (seed, step, layer, example).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
    /// Batch position of this graph's first example.
    pub example_offset: u64,
}

/// Records operations in execution order and differentiates them in reverse.
///
/// Nodes are appended only, so every node's inputs precede it and a single
/// reverse sweep visits each node once. A second `backward` call fails unless
/// the graph was built with [`Graph::accumulating`], in which case the new
/// gradients are added to the stored ones.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    mode: Mode,
    dropout_key: DropoutKey,
    accumulate: bool,
    backward_runs: usize,
}

fn shape_err(msg: String) -> AutodiffError {
    AutodiffError::Shape(msg)
}

impl Graph {
    pub fn new(mode: Mode) -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            mode,
            dropout_key: DropoutKey::default(),
            accumulate: false,
            backward_runs: 0,
        }
    }

    pub fn accumulating(mut self) -> Self {
        self.accumulate = true;
        self
    }

    pub fn with_dropout_key(mut self, key: DropoutKey) -> Self {
        self.dropout_key = key;
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op_name(&self, v: Var) -> &str {
        self.nodes[v.0].op.name()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(shape_err(format!(
                "matmul: cannot multiply {:?} by {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a_ip = ad[i * k + p];
                if a_ip == 0.0 {
                    continue;
                }
                for (o, b) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += a_ip * b;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(shape_err(format!("transpose needs rank 2, got {:?}", xv.shape())));
        }
        let out = transpose2(xv);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        if xv.rank() != 2 || start >= end || end > xv.shape()[0] {
            return Err(shape_err(format!("slice_rows {start}..{end} of {:?}", xv.shape())));
        }
        let c = xv.shape()[1];
        let out = Tensor::from_parts(vec![end - start, c], xv.data()[start * c..end * c].to_vec());
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceRows { x, start }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(format!("add: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a `[C]` vector along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = xv.last_dim();
        if bv.shape() != [c] {
            return Err(shape_err(format!("add_bias: bias {:?} for input {:?}", bv.shape(), xv.shape())));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    /// `x`: [N, ..., C] plus `v`: [N, C] broadcast over every position of
    /// each example.
    pub fn add_broadcast(&mut self, x: Var, v: Var) -> Result<Var, AutodiffError> {
        let (xv, vv) = (self.value(x), self.value(v));
        let (n, c) = (xv.shape()[0], xv.last_dim());
        if vv.shape() != [n, c] || xv.rank() < 2 {
            return Err(shape_err(format!("add_broadcast: {:?} onto {:?}", vv.shape(), xv.shape())));
        }
        let per = xv.len() / n;
        let mut data = xv.data().to_vec();
        for (ex, chunk) in data.chunks_exact_mut(per).enumerate() {
            let add = &vv.data()[ex * c..(ex + 1) * c];
            for row in chunk.chunks_exact_mut(c) {
                for (o, a) in row.iter_mut().zip(add) {
                    *o += a;
                }
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(&[x, v]);
        Ok(self.push(out, Op::AddBroadcast(x, v), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(format!("mul: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|v| v * s).collect());
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|&v| v.max(0.0)).collect());
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let out = self.value(x).reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = self.value(*xs.first().ok_or_else(|| shape_err("concat of nothing".into()))?);
        let rank = first.rank();
        if axis >= rank {
            return Err(shape_err(format!("concat axis {axis} for rank {rank}")));
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for &v in xs {
            let s = self.value(v).shape();
            let compatible = s.len() == rank
                && s.iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err(format!("concat: {:?} vs {:?} on axis {axis}", s, first.shape())));
            }
            shape[axis] += s[axis];
        }
        let outer: usize = shape[..axis].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let chunk = t.len() / outer;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(xs);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: xs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    fn as_nhwc(t: &Tensor, what: &str) -> Result<[usize; 4], AutodiffError> {
        match *t.shape() {
            [n, h, w, c] => Ok([n, h, w, c]),
            [h, w, c] => Ok([1, h, w, c]),
            _ => Err(shape_err(format!("{what}: expected [H,W,C] or [N,H,W,C], got {:?}", t.shape()))),
        }
    }

    fn spatial_shape(input: &Tensor, g: &Geometry, channels: usize) -> Vec<usize> {
        if input.rank() == 3 {
            vec![g.oh, g.ow, channels]
        } else {
            vec![g.n, g.oh, g.ow, channels]
        }
    }

    /// Cross-correlation of `x` ([N,]H,W,Cin with kernel [kh,kw,Cin,Cout].
    pub fn conv2d(&mut self, x: Var, k: Var, spec: ConvSpec) -> Result<Var, AutodiffError> {
        let (xv, kv) = (self.value(x), self.value(k));
        let dims = Self::as_nhwc(xv, "conv2d")?;
        let [kh, kw, kin, cout] = *kv.shape() else {
            return Err(shape_err(format!("conv2d: kernel must be [kh,kw,cin,cout], got {:?}", kv.shape())));
        };
        if kin != dims[3] {
            return Err(shape_err(format!("conv2d: kernel {:?} for input {:?}", kv.shape(), xv.shape())));
        }
        let geom = Geometry::new(dims, (kh, kw), cout, spec)?;
        let out = conv::conv_forward(&geom, xv.data(), kv.data());
        let shape = Self::spatial_shape(xv, &geom, cout);
        let rg = self.rg(&[x, k]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Conv2d { x, k, geom }, rg))
    }

    pub fn maxpool2d(
        &mut self,
        x: Var,
        window: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let dims = Self::as_nhwc(xv, "maxpool2d")?;
        let spec = ConvSpec {
            stride,
            dilation: (1, 1),
            padding,
        };
        let geom = Geometry::new(dims, window, dims[3], spec)?;
        let (out, argmax) = conv::maxpool_forward(&geom, xv.data());
        let shape = Self::spatial_shape(xv, &geom, dims[3]);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaxPool { x, argmax }, rg))
    }

    pub fn avgpool2d(
        &mut self,
        x: Var,
        window: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let dims = Self::as_nhwc(xv, "avgpool2d")?;
        let spec = ConvSpec {
            stride,
            dilation: (1, 1),
            padding,
        };
        let geom = Geometry::new(dims, window, dims[3], spec)?;
        let out = conv::avgpool_forward(&geom, xv.data());
        let shape = Self::spatial_shape(xv, &geom, dims[3]);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AvgPool { x, geom }, rg))
    }

    /// Normalizes each position over the last (channel) axis, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, AutodiffError> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let c = xv.last_dim();
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(shape_err(format!(
                "layer_norm: gain {:?} / bias {:?} for input {:?}",
                gv.shape(),
                bv.shape(),
                xv.shape()
            )));
        }
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout. Identity in eval mode or at rate 0. Masks are drawn
    /// from a generator keyed by (seed, step, `layer`, example), so they do
    /// not depend on how a batch is split across graphs.
    pub fn dropout(&mut self, x: Var, rate: f64, layer: u64) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidRate(rate));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let xv = self.value(x);
        let n = if xv.rank() >= 2 { xv.shape()[0] } else { 1 };
        let per = xv.len() / n;
        let keep_scale = 1.0 / (1.0 - rate);
        let mut mask = vec![0.0; xv.len()];
        let key = self.dropout_key;
        for ex in 0..n {
            let mut rng = dropout_rng(key, layer, key.example_offset + ex as u64);
            for m in &mut mask[ex * per..(ex + 1) * per] {
                if rng.random::<f64>() >= rate {
                    *m = keep_scale;
                }
            }
        }
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_parts(xv.shape().to_vec(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    /// Looks up rows of `table` ([R, d]); output shape is `index_shape + [d]`.
    pub fn embed_gather(&mut self, table: Var, indices: &[u32], index_shape: &[usize]) -> Result<Var, AutodiffError> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(shape_err(format!("embed_gather: table must be rank 2, got {:?}", tv.shape())));
        }
        if index_shape.iter().product::<usize>() != indices.len() {
            return Err(shape_err(format!("embed_gather: {} indices for shape {index_shape:?}", indices.len())));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i as usize >= rows {
                return Err(AutodiffError::IndexOutOfRange { index: i, rows });
            }
            data.extend_from_slice(&tv.data()[i as usize * d..(i as usize + 1) * d]);
        }
        let mut shape = index_shape.to_vec();
        shape.push(d);
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Mean label-smoothed cross-entropy of `logits` ([B, V]).
    ///
    /// `labels` are vocabulary indices in `1..=V`; label `l` selects logit
    /// column `l - 1`. The smoothed target is `(1 - eps) * onehot + eps / V`.
    pub fn softmax_xent_smoothed(&mut self, logits: Var, labels: &[u32], smoothing: f64) -> Result<Var, AutodiffError> {
        if !(0.0..1.0).contains(&smoothing) {
            return Err(AutodiffError::InvalidRate(smoothing));
        }
        let lv = self.value(logits);
        let [b, v] = *lv.shape() else {
            return Err(shape_err(format!("softmax_xent: logits must be [B,V], got {:?}", lv.shape())));
        };
        if labels.len() != b {
            return Err(shape_err(format!("softmax_xent: {} labels for batch {b}", labels.len())));
        }
        let probs = softmax_rows(lv);
        let off = smoothing / v as f64;
        let on = 1.0 - smoothing + off;
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            if label == 0 || label as usize > v {
                return Err(AutodiffError::InvalidLabel { label, classes: v });
            }
            let row = &lv.data()[r * v..(r + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            let target = label as usize - 1;
            let mut loss = 0.0;
            for (j, z) in row.iter().enumerate() {
                let t = if j == target { on } else { off };
                loss -= t * (z - lse);
            }
            total += loss;
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / b as f64),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                smoothing,
                probs,
            },
            rg,
        ))
    }

    /// Softmax probabilities computed alongside a cross-entropy node.
    pub fn probabilities(&self, loss: Var) -> Option<&Tensor> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp>) -> Result<Var, AutodiffError> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = op.forward(&values)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            out,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `root`, storing gradients for every
    /// trainable leaf.
    pub fn backward(&mut self, root: Var) -> Result<(), AutodiffError> {
        let root_shape = self.value(root).shape().to_vec();
        if root_shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_shape));
        }
        if self.backward_runs > 0 && !self.accumulate {
            return Err(AutodiffError::BackwardAlreadyRun);
        }
        self.backward_runs += 1;
        let mut work: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        work[root.0] = Some(Tensor::from_parts(root_shape, vec![1.0]));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = work[i].take() else { continue };
            if let Op::Leaf = self.nodes[i].op {
                work[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut work);
        }
        if self.grads.len() < self.nodes.len() {
            self.grads.resize_with(self.nodes.len(), || None);
        }
        for (i, g) in work.into_iter().enumerate() {
            let Some(g) = g else { continue };
            match &mut self.grads[i] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Gradient of a trainable leaf after [`Graph::backward`]; leaves the
    /// root does not depend on get zeros.
    pub fn grad(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.value(v).shape()),
        }
    }

    pub fn take_grad(&mut self, v: Var) -> Tensor {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(self.value(v).shape()),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, work: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut work[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.requires_grad(*a) {
                    // dA = dC . B^T
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        let grow = &gd[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            da[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    send(*a, Tensor::from_parts(vec![m, k], da));
                }
                if self.requires_grad(*b) {
                    // dB = A^T . dC
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        let grow = &gd[r * n..(r + 1) * n];
                        for p in 0..k {
                            let a_rp = av.data()[r * k + p];
                            if a_rp == 0.0 {
                                continue;
                            }
                            for (o, x) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += a_rp * x;
                            }
                        }
                    }
                    send(*b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Transpose(x) => send(*x, transpose2(g)),
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let c = xv.shape()[1];
                let mut dx = vec![0.0; xv.len()];
                dx[start * c..start * c + gd.len()].copy_from_slice(gd);
                send(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddBias(x, b) => {
                let c = g.last_dim();
                let mut db = vec![0.0; c];
                for row in gd.chunks_exact(c) {
                    for (o, v) in db.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                send(*b, Tensor::from_parts(vec![c], db));
                send(*x, g.clone());
            }
            Op::AddBroadcast(x, v) => {
                let (n, c) = (g.shape()[0], g.last_dim());
                let per = g.len() / n;
                let mut dv = vec![0.0; n * c];
                for (ex, chunk) in gd.chunks_exact(per).enumerate() {
                    let acc = &mut dv[ex * c..(ex + 1) * c];
                    for row in chunk.chunks_exact(c) {
                        for (o, val) in acc.iter_mut().zip(row) {
                            *o += val;
                        }
                    }
                }
                send(*v, Tensor::from_parts(vec![n, c], dv));
                send(*x, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = gd.iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                let db = gd.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                send(*a, Tensor::from_parts(g.shape().to_vec(), da));
                send(*b, Tensor::from_parts(g.shape().to_vec(), db));
            }
            Op::Scale(x, s) => {
                send(*x, Tensor::from_parts(g.shape().to_vec(), gd.iter().map(|v| v * s).collect()));
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                send(*x, Tensor::full(xv.shape(), gd[0]));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let dx = gd
                    .iter()
                    .zip(xv.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                send(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::Reshape(x) => {
                let xv = self.value(*x);
                send(*x, Tensor::from_parts(xv.shape().to_vec(), gd.to_vec()));
            }
            Op::Concat { inputs, axis } => {
                let outer: usize = g.shape()[..*axis].iter().product();
                let mut offset = 0;
                let out_chunk = g.len() / outer;
                for v in inputs {
                    let t = self.value(*v);
                    let chunk = t.len() / outer;
                    if self.requires_grad(*v) {
                        let mut dx = Vec::with_capacity(t.len());
                        for o in 0..outer {
                            let s = o * out_chunk + offset;
                            dx.extend_from_slice(&gd[s..s + chunk]);
                        }
                        send(*v, Tensor::from_parts(t.shape().to_vec(), dx));
                    }
                    offset += chunk;
                }
            }
            Op::Conv2d { x, k, geom } => {
                let (xv, kv) = (self.value(*x), self.value(*k));
                let (dx, dk) = conv::conv_backward(
                    geom,
                    xv.data(),
                    kv.data(),
                    gd,
                    self.requires_grad(*x),
                    self.requires_grad(*k),
                );
                if self.requires_grad(*x) {
                    send(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
                if self.requires_grad(*k) {
                    send(*k, Tensor::from_parts(kv.shape().to_vec(), dk));
                }
            }
            Op::MaxPool { x, argmax } => {
                let xv = self.value(*x);
                let mut dx = vec![0.0; xv.len()];
                for (gv, &src) in gd.iter().zip(argmax) {
                    if src != usize::MAX {
                        dx[src] += gv;
                    }
                }
                send(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
            }
            Op::AvgPool { x, geom } => {
                let xv = self.value(*x);
                send(*x, Tensor::from_parts(xv.shape().to_vec(), conv::avgpool_backward(geom, gd)));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                let c = gv.len();
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                let mut dx = vec![0.0; gd.len()];
                let mut dxhat = vec![0.0; c];
                for (r, inv) in inv_std.iter().enumerate() {
                    let grow = &gd[r * c..(r + 1) * c];
                    let hrow = &xhat[r * c..(r + 1) * c];
                    let mut sum_d = 0.0;
                    let mut sum_dh = 0.0;
                    for j in 0..c {
                        dg[j] += grow[j] * hrow[j];
                        db[j] += grow[j];
                        dxhat[j] = grow[j] * gv.data()[j];
                        sum_d += dxhat[j];
                        sum_dh += dxhat[j] * hrow[j];
                    }
                    let scale = inv / c as f64;
                    for j in 0..c {
                        dx[r * c + j] = scale * (c as f64 * dxhat[j] - sum_d - hrow[j] * sum_dh);
                    }
                }
                send(*gain, Tensor::from_parts(vec![c], dg));
                send(*bias, Tensor::from_parts(vec![c], db));
                send(*x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::Dropout { x, mask } => {
                let dx = gd.iter().zip(mask).map(|(a, m)| a * m).collect();
                send(*x, Tensor::from_parts(g.shape().to_vec(), dx));
            }
            Op::Gather { table, indices } => {
                let tv = self.value(*table);
                let d = tv.shape()[1];
                let mut dt = vec![0.0; tv.len()];
                for (p, &i) in indices.iter().enumerate() {
                    let dst = &mut dt[i as usize * d..(i as usize + 1) * d];
                    for (o, v) in dst.iter_mut().zip(&gd[p * d..(p + 1) * d]) {
                        *o += v;
                    }
                }
                send(*table, Tensor::from_parts(tv.shape().to_vec(), dt));
            }
            Op::SoftmaxXent {
                logits,
                labels,
                smoothing,
                probs,
            } => {
                let [b, v] = *probs.shape() else { unreachable!() };
                let off = smoothing / v as f64;
                let on = 1.0 - smoothing + off;
                let scale = gd[0] / b as f64;
                let mut dl = probs.data().to_vec();
                for (r, &label) in labels.iter().enumerate() {
                    let target = label as usize - 1;
                    for (j, p) in dl[r * v..(r + 1) * v].iter_mut().enumerate() {
                        let t = if j == target { on } else { off };
                        *p = (*p - t) * scale;
                    }
                }
                send(*logits, Tensor::from_parts(vec![b, v], dl));
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let grads = op.backward(&values, &node.value, g);
                for (v, t) in inputs.iter().zip(grads) {
                    send(*v, t);
                }
            }
        }
    }
}

fn dropout_rng(key: DropoutKey, layer: u64, example: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&key.seed.to_le_bytes());
    seed[8..16].copy_from_slice(&key.step.to_le_bytes());
    seed[16..24].copy_from_slice(&layer.to_le_bytes());
    seed[24..].copy_from_slice(&example.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

fn transpose2(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; t.len()];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::from_parts(vec![c, r], out)
}

/// Row-wise softmax of a [B, V] tensor.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let v = logits.last_dim();
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(v) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for p in row.iter_mut() {
            *p = (*p - max).exp();
            z += *p;
        }
        for p in row.iter_mut() {
            *p /= z;
        }
    }
    Tensor::from_parts(logits.shape().to_vec(), out)
}
