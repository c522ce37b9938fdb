use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, OptimizerState};
use super::clip::clip_global_norm;
use super::schedule::{lr_at, ScheduleConfig};
use super::TrainingError;
use crate::autodiff::{DropoutKey, Graph, Mode, Tensor};
use crate::certificate::Certificate;
use crate::icd10::Vocabulary;
use crate::model::{build_logits, topk_indices, BatchInput, Example, Model, EMBEDDING};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub smoothing: f64,
    pub clip_norm: f64,
    pub total_steps: u64,
    pub seed: u64,
    /// Validation accuracy is computed every `eval_every` steps and after
    /// the last one.
    pub eval_every: u64,
    /// Examples per gradient shard. Shards run in parallel and are reduced
    /// in batch order.
    pub shard_size: usize,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 250,
            smoothing: 0.1,
            clip_norm: 0.1,
            total_steps: 100_000,
            seed: 0,
            eval_every: 1000,
            shard_size: 125,
            adam: AdamConfig::default(),
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 32,
            total_steps: 3000,
            eval_every: 250,
            shard_size: 8,
            ..TrainConfig::paper()
        }
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let ok = self.batch_size > 0
            && self.shard_size > 0
            && self.total_steps > 0
            && self.eval_every > 0
            && self.clip_norm > 0.0
            && (0.0..1.0).contains(&self.smoothing);
        if !ok {
            return Err(TrainingError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Encoded examples with their vocabulary-index labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledSet {
    pub examples: Vec<Example>,
    pub labels: Vec<u32>,
}

impl LabeledSet {
    pub fn from_certificates(
        certs: &[Certificate],
        vocab: &Vocabulary,
        width: usize,
        year_override: Option<u16>,
    ) -> Result<Self, TrainingError> {
        let mut set = LabeledSet::default();
        for c in certs {
            let label = c
                .label
                .ok_or_else(|| TrainingError::Data(format!("certificate {} has no label", c.id)))?;
            let index = vocab
                .index_of(&label)
                .map_err(|_| TrainingError::Data(format!("certificate {}: label {label} is out of vocabulary", c.id)))?;
            set.examples.push(Example::encode(c, vocab, width, year_override)?);
            set.labels.push(index);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn check(&self, classes: usize) -> Result<(), TrainingError> {
        if self.is_empty() {
            return Err(TrainingError::Data("empty dataset".into()));
        }
        if self.examples.len() != self.labels.len() {
            return Err(TrainingError::Data(format!(
                "{} examples but {} labels",
                self.examples.len(),
                self.labels.len()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l == 0 || l as usize > classes) {
            return Err(TrainingError::Data(format!("label index {bad} outside 1..={classes}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub val_accuracy: Option<f64>,
}

/// Entropy of the smoothed target over `classes`; a lower bound on the
/// smoothed cross-entropy.
pub fn smoothed_target_entropy(classes: usize, smoothing: f64) -> f64 {
    let v = classes as f64;
    let off = smoothing / v;
    let on = 1.0 - smoothing + off;
    let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    h(on) + (v - 1.0) * h(off)
}

/// Top-1 accuracy of `model` on `set` (eval mode).
pub fn accuracy(model: &Model, set: &LabeledSet, chunk: usize) -> Result<f64, TrainingError> {
    set.check(model.config.vocab_size)?;
    let out = model.predict(&set.examples, chunk)?;
    let hits = (0..out.rows())
        .filter(|&i| topk_indices(out.probability_row(i), 1)[0] as u32 + 1 == set.labels[i])
        .count();
    Ok(hits as f64 / set.len() as f64)
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub schedule: ScheduleConfig,
    state: OptimizerState,
    order: Vec<usize>,
    epoch: u64,
    cursor: usize,
    history: Vec<StepRecord>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig, schedule: ScheduleConfig) -> Result<Self, TrainingError> {
        config.validate()?;
        schedule.validate()?;
        let shapes: Vec<&[usize]> = model.params.tensors().iter().map(Tensor::shape).collect();
        let d = model.config.d_model;
        let emb = model
            .params
            .position(EMBEDDING)
            .ok_or_else(|| TrainingError::Config("model has no embedding".into()))?;
        let state = OptimizerState::new(&shapes, config.adam).pin(emb, 0..d);
        Ok(Trainer {
            model,
            config,
            schedule,
            state,
            order: Vec::new(),
            epoch: 0,
            cursor: 0,
            history: Vec::new(),
        })
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.state.t
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.state
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(self.epoch);
            self.order = (0..n).collect();
            self.order.shuffle(&mut rng);
            self.epoch += 1;
            self.cursor = 0;
        }
        let end = (self.cursor + self.config.batch_size).min(n);
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }

    /// Mean loss and gradients over `batch`, computed shard by shard.
    fn batch_gradients(&self, data: &LabeledSet, batch: &[usize], step: u64) -> Result<(f64, Vec<Tensor>), TrainingError> {
        let cfg = &self.model.config;
        let params = &self.model.params;
        let shards: Vec<(usize, &[usize])> = batch.chunks(self.config.shard_size).enumerate().collect();
        let parts = shards
            .par_iter()
            .map(|&(s, idx)| -> Result<(f64, Vec<Tensor>), TrainingError> {
                let mut g = Graph::new(Mode::Train).with_dropout_key(DropoutKey {
                    seed: self.config.seed,
                    step,
                    example_offset: (s * self.config.shard_size) as u64,
                });
                let vars = params.bind(&mut g, true);
                let input = BatchInput::new(idx.iter().map(|&i| &data.examples[i]), cfg)?;
                let logits = build_logits(&mut g, cfg, params, &vars, &input)?;
                let labels: Vec<u32> = idx.iter().map(|&i| data.labels[i]).collect();
                let loss = g.softmax_xent_smoothed(logits, &labels, self.config.smoothing)?;
                g.backward(loss)?;
                let value = g.value(loss).item();
                Ok((value, vars.iter().map(|&v| g.take_grad(v)).collect()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let total = batch.len() as f64;
        let mut loss = 0.0;
        let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        for ((_, idx), (l, gs)) in shards.iter().zip(parts) {
            let w = idx.len() as f64 / total;
            loss += w * l;
            for (acc, g) in grads.iter_mut().zip(gs) {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += w * b;
                }
            }
        }
        Ok((loss, grads))
    }

    /// One optimizer step on the next batch of `data`.
    pub fn step(&mut self, data: &LabeledSet) -> Result<StepRecord, TrainingError> {
        let classes = self.model.config.vocab_size;
        data.check(classes)?;
        let t = self.state.t + 1;
        let batch = self.next_batch(data.len());
        let (loss, mut grads) = self.batch_gradients(data, &batch, t)?;

        if !loss.is_finite() {
            let nonfinite = grads.iter().filter(|g| !g.all_finite()).count();
            return Err(TrainingError::NonFiniteLoss {
                step: t,
                detail: format!("loss {loss}, {nonfinite} gradient arrays non-finite, lr {:?}", lr_at(t, &self.schedule).ok()),
            });
        }
        let bound = smoothed_target_entropy(classes, self.config.smoothing);
        if loss < bound - 1e-9 * bound.max(1.0) {
            return Err(TrainingError::LossBelowBound { step: t, loss, bound });
        }

        let emb = self.model.params.position(EMBEDDING).expect("checked in new");
        let d = self.model.config.d_model;
        grads[emb].data_mut()[..d].fill(0.0);

        let clip = clip_global_norm(&mut grads, self.model.params.names(), self.config.clip_norm)?;
        let lr = lr_at(t, &self.schedule)?;
        adam_step(self.model.params.tensors_mut(), &grads, &mut self.state, lr)?;

        let record = StepRecord {
            step: t,
            loss,
            lr,
            grad_norm: clip.norm,
            val_accuracy: None,
        };
        self.history.push(record);
        Ok(record)
    }

    /// Attaches a validation accuracy to the latest history record.
    pub fn record_validation(&mut self, accuracy: f64) {
        if let Some(r) = self.history.last_mut() {
            r.val_accuracy = Some(accuracy);
        }
    }

    pub fn into_parts(self) -> (Model, Vec<StepRecord>) {
        (self.model, self.history)
    }
}

/// Runs `config.total_steps` steps, evaluating on `validation` every
/// `eval_every` steps and after the last.
pub fn train(
    model: Model,
    data: &LabeledSet,
    validation: Option<&LabeledSet>,
    config: TrainConfig,
    schedule: ScheduleConfig,
) -> Result<(Model, Vec<StepRecord>), TrainingError> {
    let mut trainer = Trainer::new(model, config, schedule)?;
    for t in 1..=config.total_steps {
        trainer.step(data)?;
        if let Some(val) = validation {
            if t % config.eval_every == 0 || t == config.total_steps {
                let acc = accuracy(&trainer.model, val, 64)?;
                trainer.record_validation(acc);
            }
        }
    }
    Ok(trainer.into_parts())
}

/// Writes the history as CSV: step, loss, lr, grad_norm, val_accuracy.
pub fn write_history(path: &Path, history: &[StepRecord]) -> Result<(), TrainingError> {
    let io = |e: csv::Error| TrainingError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in history {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| TrainingError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::{CausalChain, Demographics};
    use crate::icd10::{code, Code};
    use crate::model::ModelConfig;
    use rand::Rng;

    const CODES: [&str; 12] = [
        "A41", "B20", "C34", "C46", "E11", "I10", "I21", "I50", "J18", "K70", "N18", "X42",
    ];

    fn toy_set(n: usize, seed: u64) -> (LabeledSet, Vocabulary) {
        let vocab = Vocabulary::build(CODES.iter().map(|c| code(c))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut certs = Vec::new();
        for i in 0..n {
            let pick = |rng: &mut ChaCha8Rng| code(CODES[rng.random_range(0..CODES.len())]);
            let first = pick(&mut rng);
            let part_one: Vec<Vec<Code>> = vec![vec![pick(&mut rng)], vec![first]];
            let chain = CausalChain::from_parts(&part_one, &[vec![pick(&mut rng)]]).unwrap();
            certs.push(Certificate {
                id: format!("t{i}"),
                chain,
                demo: Demographics::new(rng.random_range(1..=2), rng.random_range(0..25), 2005).unwrap(),
                label: Some(first),
                rule_output: None,
            });
        }
        (LabeledSet::from_certificates(&certs, &vocab, 7, None).unwrap(), vocab)
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            batch_size: 6,
            total_steps: 5,
            eval_every: 2,
            shard_size: 6,
            ..TrainConfig::paper()
        }
    }

    #[test]
    fn entropy_bound_matches_direct_sum() {
        let (v, eps) = (4usize, 0.1);
        let on: f64 = 0.9 + 0.025;
        let direct = -on * on.ln() - 3.0 * 0.025 * 0.025f64.ln();
        assert!((smoothed_target_entropy(v, eps) - direct).abs() < 1e-15);
        assert_eq!(smoothed_target_entropy(10, 0.0), 0.0);
    }

    #[test]
    fn deterministic_and_lr_history() {
        let (data, _) = toy_set(20, 1);
        let schedule = ScheduleConfig::with_peak(1e-2, 3);
        let run = || {
            let model = Model::new(ModelConfig::toy(), 5).unwrap();
            train(model, &data, Some(&data), toy_config(), schedule).unwrap()
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(m1.params, m2.params);
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 5);
        for r in &h1 {
            assert!((r.lr - lr_at(r.step, &schedule).unwrap()).abs() <= 1e-12);
        }
        let evaluated: Vec<u64> = h1.iter().filter(|r| r.val_accuracy.is_some()).map(|r| r.step).collect();
        assert_eq!(evaluated, vec![2, 4, 5]);
        assert!(m1.params.embedding().data()[..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sharding_changes_only_rounding() {
        let (data, _) = toy_set(12, 2);
        let schedule = ScheduleConfig::with_peak(1e-2, 3);
        let mut out = Vec::new();
        for shard in [6, 1, 4] {
            let cfg = TrainConfig { shard_size: shard, total_steps: 2, ..toy_config() };
            let mut tr = Trainer::new(Model::new(ModelConfig::toy(), 3).unwrap(), cfg, schedule).unwrap();
            let batch = tr.next_batch(data.len());
            out.push(tr.batch_gradients(&data, &batch, 1).unwrap());
        }
        for (loss, grads) in &out[1..] {
            assert!((loss - out[0].0).abs() < 1e-12);
            for (a, b) in grads.iter().zip(&out[0].1) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() < 1e-12, "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn epochs_cover_every_example_once() {
        let (data, _) = toy_set(14, 3);
        let mut tr = Trainer::new(Model::new(ModelConfig::toy(), 0).unwrap(), toy_config(), ScheduleConfig::paper()).unwrap();
        let mut seen: Vec<usize> = Vec::new();
        let sizes: Vec<usize> = (0..3).map(|_| {
            let b = tr.next_batch(data.len());
            seen.extend(&b);
            b.len()
        }).collect();
        assert_eq!(sizes, vec![6, 6, 2]);
        seen.sort();
        assert_eq!(seen, (0..14).collect::<Vec<_>>());
        let next_epoch = tr.next_batch(data.len());
        assert_eq!(next_epoch.len(), 6);
    }

    #[test]
    fn first_loss_near_uniform_and_history_csv() {
        let (data, _) = toy_set(12, 4);
        let mut tr = Trainer::new(Model::new(ModelConfig::toy(), 1).unwrap(), toy_config(), ScheduleConfig::paper()).unwrap();
        let r = tr.step(&data).unwrap();
        let ln_v = (12f64).ln();
        assert!((r.loss - ln_v).abs() < 0.1 * ln_v, "{} vs {ln_v}", r.loss);
        tr.record_validation(0.5);
        tr.step(&data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        write_history(&path, tr.history()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,loss,lr,grad_norm,val_accuracy");
        assert!(lines[1].ends_with(",0.5"));
        assert!(lines[2].ends_with(','));
    }

    #[test]
    fn rejects_bad_labels() {
        let (mut data, _) = toy_set(4, 5);
        data.labels[0] = 13;
        let mut tr = Trainer::new(Model::new(ModelConfig::toy(), 1).unwrap(), toy_config(), ScheduleConfig::paper()).unwrap();
        assert!(matches!(tr.step(&data), Err(TrainingError::Data(_))));
    }
}
