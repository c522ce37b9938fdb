//! Finite-difference checks over every primitive and every network block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{apply_block, BatchInput, Block, Example};
use super::{build_logits, ModelConfig, ModelError, ModelParameters};
use crate::autodiff::{AutodiffError, ConvSpec, GradCheck, GradCheckReport, Graph, Padding, Tensor, Var};
use crate::certificate::{CodeGrid, Demographics, LINES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteScale {
    /// `ModelConfig::toy()`; every coordinate of the small arrays.
    Toy,
    /// `ModelConfig::desk(60)`; strided coordinates.
    Desk,
}

impl std::str::FromStr for SuiteScale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "toy" => Ok(SuiteScale::Toy),
            "desk" => Ok(SuiteScale::Desk),
            other => Err(format!("unknown scale {other:?} (expected toy or desk)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub scale: SuiteScale,
    pub tolerance: f64,
    pub cases: Vec<GradCheckReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(GradCheckReport::passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &GradCheckReport> {
        self.cases.iter().filter(|c| !c.passed())
    }

    /// Every operation recorded by at least one case, sorted.
    pub fn ops(&self) -> Vec<String> {
        let mut ops: Vec<String> = self.cases.iter().flat_map(|c| c.ops.iter().cloned()).collect();
        ops.sort();
        ops.dedup();
        ops
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// A fixed random linear functional of `y`.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.value(y).shape());
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn model_err(e: ModelError) -> AutodiffError {
    match e {
        ModelError::Autodiff(a) => a,
        other => AutodiffError::Shape(other.to_string()),
    }
}

fn primitives(check: &GradCheck, out: &mut Vec<GradCheckReport>) -> Result<(), AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 5]);
    out.push(check.run("matmul", &[a, b], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        project(g, y, 2)
    })?);

    for (name, spec, k) in [
        ("conv2d same 3x3", ConvSpec::same(), (3, 3)),
        ("conv2d dilated 1x3", ConvSpec::same().with_dilation(1, 2), (1, 3)),
        ("conv2d strided valid 1x3", ConvSpec::valid().with_stride(1, 2), (1, 3)),
        ("conv2d same 3x1", ConvSpec::same(), (3, 1)),
    ] {
        let x = rand_tensor(&mut rng, &[2, 3, 7, 3]);
        let kernel = rand_tensor(&mut rng, &[k.0, k.1, 3, 2]);
        out.push(check.run(name, &[x, kernel], |g, v| {
            let y = g.conv2d(v[0], v[1], spec)?;
            project(g, y, 3)
        })?);
    }

    let x = rand_tensor(&mut rng, &[2, 4, 9, 3]);
    out.push(check.run("maxpool2d", std::slice::from_ref(&x), |g, v| {
        let y = g.maxpool2d(v[0], (1, 3), (1, 2), Padding::Valid)?;
        project(g, y, 4)
    })?);
    out.push(check.run("avgpool2d", &[x], |g, v| {
        let y = g.avgpool2d(v[0], (3, 3), (1, 1), Padding::Same)?;
        project(g, y, 5)
    })?);

    let x = rand_tensor(&mut rng, &[3, 2, 6]);
    let gain = rand_tensor(&mut rng, &[6]);
    let bias = rand_tensor(&mut rng, &[6]);
    out.push(check.run("layer_norm", &[x, gain, bias], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-6)?;
        project(g, y, 6)
    })?);

    let x = rand_tensor(&mut rng, &[4, 5]);
    out.push(check.run("dropout", &[x], |g, v| {
        let y = g.dropout(v[0], 0.3, 1)?;
        project(g, y, 7)
    })?);

    let logits = rand_tensor(&mut rng, &[3, 5]);
    out.push(check.run("softmax_xent_smoothed", &[logits], |g, v| {
        g.softmax_xent_smoothed(v[0], &[2, 5, 1], 0.1)
    })?);

    let a = rand_tensor(&mut rng, &[2, 3, 4]);
    let b = rand_tensor(&mut rng, &[2, 3, 2]);
    out.push(check.run("concat reshape transpose slice_rows add", &[a.clone(), b], |g, v| {
        let c = g.concat(&[v[0], v[1]], 2)?;
        let c2 = g.concat(&[v[0], v[0]], 1)?;
        let r = g.reshape(c2, &[2, 24])?;
        let t = g.transpose(r)?;
        let s = g.slice_rows(t, 3, 10)?;
        let p = project(g, c, 8)?;
        let q = project(g, s, 9)?;
        g.add(p, q)
    })?);
    let bias = rand_tensor(&mut rng, &[4]);
    out.push(check.run("add_bias scale", &[a, bias], |g, v| {
        let y = g.add_bias(v[0], v[1])?;
        let y = g.scale(y, -1.5);
        project(g, y, 10)
    })?);
    let x = rand_tensor(&mut rng, &[2, 3, 6]);
    let demo = rand_tensor(&mut rng, &[2, 6]);
    out.push(check.run("add_broadcast relu", &[x, demo], |g, v| {
        let y = g.add_broadcast(v[0], v[1])?;
        let y = g.relu(y);
        project(g, y, 11)
    })?);
    let table = rand_tensor(&mut rng, &[4, 3]);
    out.push(check.run("embed_gather", &[table], |g, v| {
        let e = g.embed_gather(v[0], &[1, 3, 1, 0], &[2, 2])?;
        project(g, e, 12)
    })?);
    Ok(())
}

/// Blocks in network order with their input `(width, channels)`.
fn blocks(cfg: &ModelConfig) -> Vec<(Block, usize, usize)> {
    let pooled = |w: usize| (w - 3) / 2 + 1;
    let w1 = cfg.width;
    let w2 = pooled(w1);
    let w3 = pooled(w2);
    let mut out: Vec<(Block, usize, usize)> = cfg
        .temporal_dilations
        .iter()
        .enumerate()
        .map(|(index, &dilation)| (Block::Temporal { index, dilation }, w1, cfg.d_model))
        .collect();
    for (stage, w) in [(1, w1), (2, w2), (3, w3)] {
        if cfg.block_counts[stage - 1] > 0 {
            out.push((Block::Inception { stage, index: 0 }, w, cfg.stage_widths[stage - 1]));
        }
        if stage < 3 {
            out.push((Block::Pool { stage }, w, cfg.stage_widths[stage - 1]));
        }
    }
    out
}

fn block_prefix(block: Block) -> String {
    match block {
        Block::Temporal { index, .. } => format!("temporal.{index}."),
        Block::Inception { stage, index } => format!("stage{stage}.{index}."),
        Block::Pool { stage } => format!("pool{stage}."),
    }
}

fn suite_example(rng: &mut ChaCha8Rng, cfg: &ModelConfig, fill: usize) -> Example {
    let mut cells = vec![0u32; LINES * cfg.width];
    for row in 0..LINES {
        for col in 0..fill.min(cfg.width) {
            if (row + col) % 3 != 2 {
                cells[row * cfg.width + col] = rng.random_range(1..=cfg.vocab_size as u32);
            }
        }
    }
    Example {
        grid: CodeGrid::from_cells(cfg.width, cells).expect("cells fit the grid"),
        demo: Demographics::new(rng.random_range(1..=2), rng.random_range(0..25), cfg.year_base + 3)
            .expect("valid demographics"),
    }
}

fn network(
    check: &GradCheck,
    cfg: &ModelConfig,
    coords: Option<usize>,
    out: &mut Vec<GradCheckReport>,
) -> Result<(), ModelError> {
    let params = ModelParameters::init(cfg, 21)?;
    let check = match coords {
        Some(n) => check.clone().max_coords(n),
        None => check.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for (block, w, c) in blocks(cfg) {
        let prefix = block_prefix(block);
        let used: Vec<usize> = (0..params.len()).filter(|&i| params.names()[i].starts_with(&prefix)).collect();
        let mut inputs = vec![rand_tensor(&mut rng, &[1, LINES, w, c])];
        inputs.extend(used.iter().map(|&i| params.tensors()[i].clone()));
        let name = format!("{block:?}");
        out.push(check.run(&name, &inputs, |g, v| {
            let mut vars: Vec<Var> = params.tensors().iter().map(|t| g.constant(t.clone())).collect();
            for (k, &i) in used.iter().enumerate() {
                vars[i] = v[k + 1];
            }
            let y = apply_block(g, cfg, &params, &vars, block, v[0]).map_err(model_err)?;
            project(g, y, 23)
        })?);
    }

    let examples = [suite_example(&mut rng, cfg, 4), suite_example(&mut rng, cfg, cfg.width)];
    let batch = BatchInput::new(examples.iter(), cfg)?;
    let labels = [1, cfg.vocab_size as u32];
    out.push(check.run("full model", params.tensors(), |g, v| {
        let logits = build_logits(g, cfg, &params, v, &batch).map_err(model_err)?;
        g.softmax_xent_smoothed(logits, &labels, 0.1)
    })?);
    Ok(())
}

/// Runs the primitive checks and the block and full-model checks at
/// `scale`, in train mode with dropout active.
pub fn gradient_suite(scale: SuiteScale, tolerance: f64) -> Result<SuiteReport, ModelError> {
    let check = GradCheck::new(tolerance);
    let mut cases = Vec::new();
    primitives(&check, &mut cases)?;
    match scale {
        SuiteScale::Toy => network(&check, &ModelConfig::toy(), None, &mut cases)?,
        SuiteScale::Desk => network(&check, &ModelConfig::desk(60), Some(6), &mut cases)?,
    }
    Ok(SuiteReport {
        scale,
        tolerance,
        cases,
    })
}
