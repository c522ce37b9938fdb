//! Metrics and analyses: accuracy with bootstrap intervals, top-k, rule-coder
//! baselines, per-chapter rates and confusion, calibration, and code-set
//! trajectories for recoding studies.

mod baseline;
mod calibration;
mod chapters;
mod metrics;
mod report;
mod trajectory;

pub use baseline::{rule_baseline, BaselineAccuracy};
pub use calibration::{calibration, Calibration, CalibrationBin, CALIBRATION_BINS};
pub use chapters::{chapter_confusion, per_chapter_rates, ChapterRate, ConfusionMatrix};
pub use metrics::{
    accuracy, bootstrap_ci, correctness, second_choice_accuracy_on_errors, second_choice_hits, topk_accuracy,
    topk_hits, Bootstrap, Estimate,
};
pub use report::{evaluate, write_report, MetricReport};
pub use trajectory::{
    codeset_trajectory, compare_trajectories, read_reference, write_trajectories, CodeSet, CodeSetEntry,
    TrajectorySeries,
};

use crate::icd10::Icd10Error;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    Empty,
    #[error("{what}: {left} vs {right} records")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("k = {k} is outside 1..={classes}")]
    InvalidK { k: usize, classes: usize },
    #[error("second-choice accuracy is undefined on an empty error set")]
    NoErrors,
    #[error("label index {label} outside 1..={classes}")]
    InvalidLabel { label: u32, classes: usize },
    #[error("bootstrap needs at least one resample")]
    NoResamples,
    #[error("certificate {0} lacks a label or rule output")]
    Unscored(String),
    #[error("code set entry {0:?} is neither a code nor a prefix ending in '*'")]
    CodeSetEntry(String),
    #[error("code set is empty")]
    EmptyCodeSet,
    #[error("series cover disjoint years")]
    DisjointYears,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Icd10(#[from] Icd10Error),
}
