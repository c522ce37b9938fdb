//! Command-line entry points. Every run merges an optional TOML config file
//! with flag overrides and writes `manifest.json` next to its outputs.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::certificate::CertificateError;
use crate::eval::EvalError;
use crate::model::{ModelError, SuiteScale};
use crate::synth::SynthError;
use crate::training::TrainingError;

pub use config::{CoderAnomaly, EvalConfig, GenDataConfig, Preset, TrainRunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Knobs(_) | SynthError::Split(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CertificateError> for CliError {
    fn from(e: CertificateError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::NonFiniteGradient(_)
            | TrainingError::NonFiniteLoss { .. }
            | TrainingError::LossBelowBound { .. }
            | TrainingError::Autodiff(_) => CliError::Numeric(e.to_string()),
            TrainingError::Config(_) | TrainingError::Schedule(_) => CliError::Usage(e.to_string()),
            TrainingError::Model(m) => m.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidK { .. } | EvalError::NoResamples => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ucdnet", version, about = "Underlying-cause-of-death coding with a convolutional network")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. 1 is the deterministic mode.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// TOML configuration; flags win over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a synthetic world and sample train/validation/test certificates.
    GenData(GenDataArgs),
    /// Train a model on a gen-data directory.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled dataset.
    Eval(EvalArgs),
    /// Predict the underlying cause of every record of a dataset.
    Code(CodeArgs),
    /// Code-set trajectories from rule-coder labels and model predictions.
    RecodeStudy(RecodeArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub records: Option<usize>,
    /// Seed of the world; defaults to --seed.
    #[arg(long)]
    pub world_seed: Option<u64>,
    #[arg(long)]
    pub validation_per_year: Option<usize>,
    #[arg(long)]
    pub test_per_year: Option<usize>,
    /// Zero every noise rate.
    #[arg(long)]
    pub noiseless: bool,
    /// Rule-coder-only rewrite, `FROM:TO:YEAR`, e.g. `X42:X44:2012`.
    #[arg(long)]
    pub coder_anomaly: Option<CoderAnomaly>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled dataset (TSV).
    #[arg(long)]
    pub data: PathBuf,
    /// Also write the model's trajectory for this code set.
    #[arg(long)]
    pub codeset: Option<PathBuf>,
    #[arg(long)]
    pub resamples: Option<usize>,
    #[arg(long)]
    pub year_override: Option<u16>,
}

#[derive(Debug, Clone, Args)]
pub struct CodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset (TSV); labels are ignored.
    #[arg(long)]
    pub data: PathBuf,
    /// Code every record as if it died in this year.
    #[arg(long)]
    pub year_override: Option<u16>,
}

#[derive(Debug, Clone, Args)]
pub struct RecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub codeset: PathBuf,
    /// CSV with header `year,count`; a lower bound on the true counts.
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub year_override: Option<u16>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// toy or desk.
    #[arg(default_value = "toy")]
    pub scale: SuiteScale,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactVersions {
    pub ucdnet: String,
    pub checkpoint_format: u32,
}

/// What a run did, written as `manifest.json` in its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// The merged configuration the command ran with.
    pub config: serde_json::Value,
    pub seeds: serde_json::Value,
    pub workers: usize,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub versions: ArtifactVersions,
    pub wall_clock_seconds: f64,
}

/// Written by a command; completed and saved by [`run`].
#[derive(Debug, Default)]
pub(crate) struct RunRecord {
    pub config: serde_json::Value,
    pub seeds: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

pub const MANIFEST: &str = "manifest.json";

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData(_) => "gen-data",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Code(_) => "code",
        Command::RecodeStudy(_) => "recode-study",
        Command::Gradcheck(_) => "gradcheck",
    }
}

/// Runs a parsed command and writes its manifest.
pub fn run(cli: &Cli) -> Result<RunManifest, CliError> {
    if cli.common.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.workers)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let start = Instant::now();
    let out = &cli.common.out;
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let record = pool.install(|| commands::dispatch(cli))?;
    let manifest = RunManifest {
        command: command_name(&cli.command).to_string(),
        config: record.config,
        seeds: record.seeds,
        workers: cli.common.workers,
        inputs: record.inputs,
        outputs: record.outputs,
        versions: ArtifactVersions {
            ucdnet: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_format: crate::model::FORMAT_VERSION,
        },
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let path = out.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifests serialize");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(manifest)
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors go to standard error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("ucdnet {}: {e}", command_name(&cli.command));
            e.exit_code()
        }
    }
}
