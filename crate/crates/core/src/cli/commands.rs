use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::config::{read_file, resolve, EvalConfig, GenDataConfig, TrainRunConfig};
use super::{Cli, CliError, CodeArgs, Command, EvalArgs, GenDataArgs, GradcheckArgs, RecodeArgs, RunRecord, TrainArgs};
use crate::certificate::{read_dataset, Certificate};
use crate::eval::{
    codeset_trajectory, compare_trajectories, evaluate, read_reference, write_report, write_trajectories, Bootstrap,
    CodeSet,
};
use crate::icd10::{Code, Vocabulary};
use crate::model::{gradient_suite, load_checkpoint, predict_topk, save_checkpoint, Example, ForwardOutput, Model};
use crate::synth::{build_world, generate_dataset, read_world, write_generated, NoiseRates};
use crate::training::{accuracy, write_history, LabeledSet, Trainer};

const PREDICT_CHUNK: usize = 64;

pub(crate) fn dispatch(cli: &Cli) -> Result<RunRecord, CliError> {
    let file = read_file(cli.common.config.as_deref())?;
    let out = cli.common.out.as_path();
    let seed = cli.common.seed.map(|s| json!(s)).unwrap_or(Value::Null);
    match &cli.command {
        Command::GenData(a) => gen_data(a, &file, seed, out),
        Command::Train(a) => train(a, &file, seed, out),
        Command::Eval(a) => eval(a, &file, seed, out),
        Command::Code(a) => code(a, out),
        Command::RecodeStudy(a) => recode_study(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn opt<T: serde::Serialize>(v: Option<T>) -> Value {
    v.map(|x| json!(x)).unwrap_or(Value::Null)
}

fn gen_data(a: &GenDataArgs, file: &Value, seed: Value, out: &Path) -> Result<RunRecord, CliError> {
    let noise = a.noiseless.then(|| json!(NoiseRates::zero()));
    let (cfg, tree): (GenDataConfig, Value) = resolve(
        &GenDataConfig::default(),
        file,
        &[
            ("seed", seed),
            ("world_seed", opt(a.world_seed)),
            ("records", opt(a.records)),
            ("split.validation_per_year", opt(a.validation_per_year)),
            ("split.test_per_year", opt(a.test_per_year)),
            ("world.noise", opt(noise)),
            ("coder_anomaly", opt(a.coder_anomaly)),
        ],
    )?;
    let world_seed = cfg.world_seed.unwrap_or(cfg.seed);
    let mut world = build_world(world_seed, cfg.world)?;
    if let Some(an) = cfg.coder_anomaly {
        world = world.with_coder_anomaly(an.from, an.to, an.year);
        world.validate()?;
    }
    let data = generate_dataset(&world, cfg.records, cfg.split, cfg.seed)?;
    write_generated(&data, &world, out)?;
    let all = &data.summary.baselines["all"];
    eprintln!(
        "gen-data: {} train, {} validation, {} test; rule coder overall {:.4}, reject rate {:.4}",
        data.train.len(),
        data.validation.len(),
        data.test.len(),
        all.overall,
        all.reject_rate
    );
    Ok(RunRecord {
        config: tree,
        seeds: json!({ "world": world_seed, "data": cfg.seed }),
        inputs: Vec::new(),
        outputs: ["train.tsv", "validation.tsv", "test.tsv", "world.json", "summary.json"]
            .map(|f| out.join(f))
            .to_vec(),
    })
}

fn read_certs(path: &Path) -> Result<Vec<Certificate>, CliError> {
    let certs = read_dataset(path)?;
    if certs.is_empty() {
        return Err(CliError::Data(format!("{}: no records", path.display())));
    }
    Ok(certs)
}

fn train(a: &TrainArgs, file: &Value, seed: Value, out: &Path) -> Result<RunRecord, CliError> {
    let world_path = a.data.join("world.json");
    let world = read_world(&world_path)?;
    let vocab = world.vocabulary();
    let preset = match a.preset {
        Some(p) => p,
        None => match file.get("preset") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::Usage(format!("preset: {e}")))?,
            None => super::Preset::Desk,
        },
    };
    let (mut cfg, mut tree): (TrainRunConfig, Value) = resolve(
        &TrainRunConfig::preset(preset, vocab.len()),
        file,
        &[
            ("preset", json!(preset)),
            ("seed", seed),
            ("train.total_steps", opt(a.steps)),
            ("train.batch_size", opt(a.batch_size)),
            ("train.eval_every", opt(a.eval_every)),
        ],
    )?;
    if cfg.model.vocab_size != vocab.len() {
        return Err(CliError::Usage(format!(
            "model.vocab_size {} does not match the {} codes of {}",
            cfg.model.vocab_size,
            vocab.len(),
            world_path.display()
        )));
    }
    cfg.train.seed = cfg.seed;
    tree["train"]["seed"] = json!(cfg.seed);

    let train_path = a.data.join("train.tsv");
    let val_path = a.data.join("validation.tsv");
    let width = cfg.model.width;
    let data = LabeledSet::from_certificates(&read_certs(&train_path)?, &vocab, width, None)?;
    let validation = LabeledSet::from_certificates(&read_certs(&val_path)?, &vocab, width, None)?;

    let model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.train, cfg.schedule)?;
    let steps = cfg.train.total_steps;
    for t in 1..=steps {
        let r = trainer.step(&data)?;
        if t % cfg.train.eval_every == 0 || t == steps {
            let acc = accuracy(&trainer.model, &validation, PREDICT_CHUNK)?;
            trainer.record_validation(acc);
            eprintln!("train: step {t}/{steps} loss {:.4} lr {:.3e} validation accuracy {acc:.4}", r.loss, r.lr);
        }
    }
    let (model, history) = trainer.into_parts();
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&ckpt, &model, Some(&vocab))?;
    let hist = out.join("history.csv");
    write_history(&hist, &history)?;
    Ok(RunRecord {
        config: tree,
        seeds: json!({ "init": cfg.seed, "shuffle": cfg.seed, "dropout": cfg.seed }),
        inputs: vec![world_path, train_path, val_path],
        outputs: vec![ckpt, hist],
    })
}

fn load_model(path: &Path) -> Result<(Model, Vocabulary), CliError> {
    let (model, vocab) = load_checkpoint(path)?;
    let vocab = vocab.ok_or_else(|| CliError::Data(format!("{} carries no vocabulary", path.display())))?;
    Ok((model, vocab))
}

fn predict(model: &Model, vocab: &Vocabulary, certs: &[Certificate], year: Option<u16>) -> Result<ForwardOutput, CliError> {
    if let Some(y) = year {
        model.config.years().category(y)?;
    }
    let examples = certs
        .iter()
        .map(|c| Example::encode(c, vocab, model.config.width, year))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(model.predict(&examples, PREDICT_CHUNK)?)
}

fn top1(out: &ForwardOutput, vocab: &Vocabulary) -> Result<Vec<Code>, CliError> {
    Ok(predict_topk(out, vocab, 1)?.into_iter().map(|r| r[0].0).collect())
}

fn eval(a: &EvalArgs, file: &Value, seed: Value, out: &Path) -> Result<RunRecord, CliError> {
    let (cfg, tree): (EvalConfig, Value) = resolve(
        &EvalConfig::default(),
        file,
        &[
            ("bootstrap_seed", seed),
            ("bootstrap_resamples", opt(a.resamples)),
            ("year_override", opt(a.year_override)),
        ],
    )?;
    let (model, vocab) = load_model(&a.checkpoint)?;
    let certs = read_certs(&a.data)?;
    let labels = certs
        .iter()
        .map(|c| {
            let l = c.label.ok_or_else(|| CliError::Data(format!("record {} has no label", c.id)))?;
            vocab
                .index_of(&l)
                .map_err(|_| CliError::Data(format!("record {}: label {l} is out of vocabulary", c.id)))
        })
        .collect::<Result<Vec<u32>, _>>()?;
    let probs = predict(&model, &vocab, &certs, cfg.year_override)?;
    let bootstrap = Bootstrap {
        resamples: cfg.bootstrap_resamples,
        seed: cfg.bootstrap_seed,
    };
    let report = evaluate(&probs.probabilities, &labels, &vocab, Some(&certs), bootstrap)?;
    write_report(&report, out)?;
    eprintln!(
        "eval: accuracy {:.4} [{:.4}, {:.4}], top-2 {:.4}",
        report.accuracy.value, report.accuracy.lo, report.accuracy.hi, report.top2_accuracy.value
    );
    let mut outputs: Vec<PathBuf> = ["summary.json", "per_chapter.csv", "confusion.csv", "calibration.csv"]
        .map(|f| out.join(f))
        .to_vec();
    let mut inputs = vec![a.checkpoint.clone(), a.data.clone()];
    if let Some(set_path) = &a.codeset {
        let set = CodeSet::read(set_path)?;
        let preds = top1(&probs, &vocab)?;
        let series = codeset_trajectory(certs.iter().map(|c| c.demo.year).zip(&preds), &set, model.config.years().years());
        let path = out.join("trajectory.csv");
        write_trajectories(&path, &[("model", &series)])?;
        inputs.push(set_path.clone());
        outputs.push(path);
    }
    Ok(RunRecord {
        config: tree,
        seeds: json!({ "bootstrap": cfg.bootstrap_seed }),
        inputs,
        outputs,
    })
}

fn code(a: &CodeArgs, out: &Path) -> Result<RunRecord, CliError> {
    let (model, vocab) = load_model(&a.checkpoint)?;
    let certs = read_certs(&a.data)?;
    let probs = predict(&model, &vocab, &certs, a.year_override)?;
    let top = predict_topk(&probs, &vocab, 2.min(vocab.len()))?;
    let path = out.join("predictions.tsv");
    let io = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_path(&path).map_err(io)?;
    w.write_record(["id", "year", "coded_year", "code", "confidence", "second", "second_confidence"])
        .map_err(io)?;
    for (c, t) in certs.iter().zip(&top) {
        let second = t.get(1);
        w.write_record([
            c.id.clone(),
            c.demo.year.to_string(),
            a.year_override.unwrap_or(c.demo.year).to_string(),
            t[0].0.to_string(),
            t[0].1.to_string(),
            second.map(|s| s.0.to_string()).unwrap_or_default(),
            second.map(|s| s.1.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    eprintln!("code: {} records", certs.len());
    Ok(RunRecord {
        config: json!({ "checkpoint": a.checkpoint, "data": a.data, "year_override": a.year_override }),
        seeds: Value::Null,
        inputs: vec![a.checkpoint.clone(), a.data.clone()],
        outputs: vec![path],
    })
}

fn recode_study(a: &RecodeArgs, out: &Path) -> Result<RunRecord, CliError> {
    let (model, vocab) = load_model(&a.checkpoint)?;
    let certs = read_certs(&a.data)?;
    let set = CodeSet::read(&a.codeset)?;
    let reference = read_reference(&a.reference)?;
    let years: Vec<u16> = model.config.years().years().collect();

    let official = certs
        .iter()
        .map(|c| {
            c.official_code()
                .ok_or_else(|| CliError::Data(format!("record {} has neither a rule output nor a label", c.id)))
        })
        .collect::<Result<Vec<Code>, _>>()?;
    let rule = codeset_trajectory(
        certs.iter().map(|c| c.demo.year).zip(&official),
        &set,
        years.iter().copied(),
    );
    let preds = top1(&predict(&model, &vocab, &certs, a.year_override)?, &vocab)?;
    let recoded = codeset_trajectory(certs.iter().map(|c| c.demo.year).zip(&preds), &set, years.iter().copied());

    let rule_flags = compare_trajectories(&rule, &reference)?;
    let model_flags = compare_trajectories(&recoded, &reference)?;
    let traj = out.join("trajectories.csv");
    write_trajectories(&traj, &[("rule_coder", &rule), ("model", &recoded), ("reference", &reference)])?;
    let comparison = json!({
        "year_override": a.year_override,
        "rule_coder": { "total": rule.total(), "violations": rule_flags },
        "model": { "total": recoded.total(), "violations": model_flags },
    });
    let cmp = out.join("comparison.json");
    let mut text = serde_json::to_string_pretty(&comparison).expect("json");
    text.push('\n');
    std::fs::write(&cmp, text).map_err(|e| CliError::Data(format!("{}: {e}", cmp.display())))?;
    eprintln!("recode-study: rule-coder violations {rule_flags:?}, model violations {model_flags:?}");
    Ok(RunRecord {
        config: json!({
            "checkpoint": a.checkpoint,
            "data": a.data,
            "codeset": a.codeset,
            "reference": a.reference,
            "year_override": a.year_override,
        }),
        seeds: Value::Null,
        inputs: vec![a.checkpoint.clone(), a.data.clone(), a.codeset.clone(), a.reference.clone()],
        outputs: vec![traj, cmp],
    })
}

fn gradcheck(a: &GradcheckArgs, out: &Path) -> Result<RunRecord, CliError> {
    let report = gradient_suite(a.scale, a.tolerance)?;
    let cases: Vec<Value> = report
        .cases
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "passed": c.passed(),
                "checked": c.checked,
                "non_differentiable": c.non_differentiable.len(),
                "max_rel_err": c.max_rel_err,
                "failures": c.failures.len(),
                "ops": c.ops,
            })
        })
        .collect();
    let body = json!({
        "scale": report.scale,
        "tolerance": report.tolerance,
        "passed": report.passed(),
        "ops": report.ops(),
        "cases": cases,
    });
    let path = out.join("gradcheck.json");
    let mut text = serde_json::to_string_pretty(&body).expect("json");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for c in &report.cases {
        eprintln!(
            "gradcheck: {:<44} {} (max rel err {:.2e})",
            c.name,
            if c.passed() { "ok" } else { "FAILED" },
            c.max_rel_err
        );
    }
    if !report.passed() {
        let names: Vec<&str> = report.failed().map(|c| c.name.as_str()).collect();
        return Err(CliError::Numeric(format!("gradient check failed for {}", names.join(", "))));
    }
    Ok(RunRecord {
        config: json!({ "scale": a.scale, "tolerance": a.tolerance }),
        seeds: Value::Null,
        inputs: Vec::new(),
        outputs: vec![path],
    })
}
