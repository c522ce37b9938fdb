use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn ucdnet(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ucdnet")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn ok(args: &[&str]) {
    let (code, err) = ucdnet(args);
    assert_eq!(code, 0, "{args:?} failed: {err}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn same_outputs(a: &Path, b: &Path) {
    for e in std::fs::read_dir(a).unwrap() {
        let name = e.unwrap().file_name();
        if name == "manifest.json" {
            continue;
        }
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

/// Generated data plus a briefly trained toy model, shared by every test.
struct Fixture {
    _dir: TempDir,
    data: PathBuf,
    ckpt: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let train = dir.path().join("train");
        ok(&["gen-data", "--records", "2500", "--seed", "7", "--test-per-year", "20", "--out", s(&data)]);
        ok(&["train", "--data", s(&data), "--preset", "toy", "--steps", "20", "--seed", "1", "--out", s(&train)]);
        Fixture {
            ckpt: train.join("model.ckpt"),
            _dir: dir,
            data,
        }
    })
}

#[test]
fn gen_data_writes_files_manifest_and_baseline() {
    let f = fixture();
    for name in ["train.tsv", "validation.tsv", "test.tsv", "world.json", "summary.json", "manifest.json"] {
        assert!(f.data.join(name).is_file(), "{name}");
    }
    let m = json(&f.data.join("manifest.json"));
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["config"]["records"], 2500);
    assert_eq!(m["seeds"]["data"], 7);
    assert!(m["versions"]["ucdnet"].is_string());
    let all = &json(&f.data.join("summary.json"))["baselines"]["all"];
    for key in ["overall", "non_rejected", "reject_rate"] {
        assert!(all[key].is_number(), "{key}: {all}");
    }
    assert!(all["non_rejected"].as_f64() > all["overall"].as_f64());
}

#[test]
fn gen_data_same_seed_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        ok(&["gen-data", "--records", "800", "--test-per-year", "10", "--validation-per-year", "5", "--seed", "3", "--out", s(out)]);
    }
    ok(&["gen-data", "--records", "800", "--test-per-year", "10", "--validation-per-year", "5", "--seed", "4", "--out", s(&c)]);
    same_outputs(&a, &b);
    assert_ne!(std::fs::read(a.join("train.tsv")).unwrap(), std::fs::read(c.join("train.tsv")).unwrap());
}

#[test]
fn train_writes_checkpoint_history_and_manifest() {
    let f = fixture();
    let dir = f.ckpt.parent().unwrap();
    let history = std::fs::read_to_string(dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 21);
    let m = json(&dir.join("manifest.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["config"]["preset"], "toy");
    assert_eq!(m["config"]["train"]["total_steps"], 20);
}

#[test]
fn code_writes_one_row_per_record_with_year_override() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let test = f.data.join("test.tsv");
    ok(&["code", "--checkpoint", s(&f.ckpt), "--data", s(&test), "--year-override", "2015", "--out", s(dir.path())]);
    let records = std::fs::read_to_string(&test).unwrap().lines().count() - 1;
    let text = std::fs::read_to_string(dir.path().join("predictions.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0], ["id", "year", "coded_year", "code", "confidence", "second", "second_confidence"]);
    assert_eq!(rows.len() - 1, records);
    for r in &rows[1..] {
        assert_eq!(r[2], "2015");
        let (p1, p2): (f64, f64) = (r[4].parse().unwrap(), r[6].parse().unwrap());
        assert!(p1 >= p2 && p2 >= 0.0 && p1 <= 1.0);
    }
}

#[test]
fn eval_rerun_is_identical() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let test = f.data.join("test.tsv");
    for out in [&a, &b] {
        ok(&["eval", "--checkpoint", s(&f.ckpt), "--data", s(&test), "--resamples", "100", "--out", s(out)]);
    }
    for name in ["summary.json", "per_chapter.csv", "confusion.csv", "calibration.csv"] {
        assert!(a.join(name).is_file(), "{name}");
    }
    same_outputs(&a, &b);
    let summary = json(&a.join("summary.json"));
    let acc = &summary["accuracy"];
    assert!(acc["lo"].as_f64() <= acc["value"].as_f64() && acc["value"].as_f64() <= acc["hi"].as_f64());
}

#[test]
fn recode_study_has_no_violations_below_both_series() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let codeset = dir.path().join("codeset.txt");
    std::fs::write(&codeset, "X42\nF11*\n").unwrap();
    let reference = dir.path().join("reference.csv");
    let rows: String = (2000..=2015).map(|y| format!("{y},0\n")).collect();
    std::fs::write(&reference, format!("year,count\n{rows}")).unwrap();
    let out = dir.path().join("out");
    ok(&[
        "recode-study",
        "--checkpoint",
        s(&f.ckpt),
        "--data",
        s(&f.data.join("test.tsv")),
        "--codeset",
        s(&codeset),
        "--reference",
        s(&reference),
        "--out",
        s(&out),
    ]);
    let cmp = json(&out.join("comparison.json"));
    assert_eq!(cmp["rule_coder"]["violations"], serde_json::json!([]));
    assert_eq!(cmp["model"]["violations"], serde_json::json!([]));
    let traj = std::fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some("year,rule_coder,model,reference"));
    assert_eq!(traj.lines().count(), 17);
}

#[test]
fn gradcheck_toy_passes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gradcheck", "toy", "--out", s(dir.path())]);
    let report = json(&dir.path().join("gradcheck.json"));
    assert_eq!(report["scale"], "toy");
    assert!(report["cases"].as_array().unwrap().len() > 10);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(ucdnet(&["gen-data", "--records", "lots"]).0, 2);
    assert_eq!(ucdnet(&["frobnicate"]).0, 2);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "recordz = 5\n").unwrap();
    assert_eq!(ucdnet(&["gen-data", "--config", s(&cfg), "--out", s(&out)]).0, 2);
    let missing = dir.path().join("missing.tsv");
    assert_eq!(ucdnet(&["code", "--checkpoint", s(&missing), "--data", s(&missing), "--out", s(&out)]).0, 3);
    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(ucdnet(&["code", "--checkpoint", s(&garbage), "--data", s(&missing), "--out", s(&out)]).0, 3);
}
