use std::path::Path;
use std::str::FromStr;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::icd10::Code;
use crate::model::ModelConfig;
use crate::synth::{SplitSpec, WorldKnobs};
use crate::training::{ScheduleConfig, TrainConfig};

/// A rule-coder-only rewrite of one code in one year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoderAnomaly {
    pub from: Code,
    pub to: Code,
    pub year: u16,
}

impl FromStr for CoderAnomaly {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [from, to, year] = parts[..] else {
            return Err(format!("expected FROM:TO:YEAR, got {s:?}"));
        };
        Ok(CoderAnomaly {
            from: from.parse().map_err(|e| format!("{e}"))?,
            to: to.parse().map_err(|e| format!("{e}"))?,
            year: year.parse().map_err(|e| format!("year {year:?}: {e}"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataConfig {
    pub seed: u64,
    /// Defaults to `seed`.
    pub world_seed: Option<u64>,
    pub records: usize,
    pub split: SplitSpec,
    pub world: WorldKnobs,
    pub coder_anomaly: Option<CoderAnomaly>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            seed: 0,
            world_seed: None,
            records: 20_000,
            split: SplitSpec {
                validation_per_year: 50,
                test_per_year: 100,
            },
            world: WorldKnobs::default(),
            coder_anomaly: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Toy,
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub preset: Preset,
    /// Seeds both parameter initialization and batch order.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub schedule: ScheduleConfig,
}

impl TrainRunConfig {
    pub fn preset(preset: Preset, vocab_size: usize) -> Self {
        let (model, train, schedule) = match preset {
            Preset::Toy => (
                ModelConfig {
                    vocab_size,
                    ..ModelConfig::toy()
                },
                TrainConfig {
                    total_steps: 200,
                    eval_every: 50,
                    ..TrainConfig::desk()
                },
                ScheduleConfig::desk(),
            ),
            Preset::Desk => (ModelConfig::desk(vocab_size), TrainConfig::desk(), ScheduleConfig::desk()),
            Preset::Paper => (ModelConfig::paper(vocab_size), TrainConfig::paper(), ScheduleConfig::paper()),
        };
        TrainRunConfig {
            preset,
            seed: 0,
            model,
            train,
            schedule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    pub year_override: Option<u16>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bootstrap_resamples: 1000,
            bootstrap_seed: 0,
            year_override: None,
        }
    }
}

/// Reads a TOML file into a JSON tree; a missing path gives an empty table.
pub(crate) fn read_file(path: Option<&Path>) -> Result<Value, CliError> {
    let Some(path) = path else {
        return Ok(Value::Object(Default::default()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Overlays `patch` on `base`. Keys missing from `base` are rejected so that
/// typos do not pass silently.
pub(crate) fn merge(base: &mut Value, patch: &Value, at: &str) -> Result<(), CliError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(k) {
                    None => return Err(CliError::Usage(format!("unknown config key {path}"))),
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &path)?,
                    Some(slot) => *slot = v.clone(),
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

/// `defaults` overlaid with `file`, then with the non-null entries of
/// `flags` (given as dotted paths).
pub(crate) fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: &Value,
    flags: &[(&str, Value)],
) -> Result<(T, Value), CliError> {
    let mut tree = serde_json::to_value(defaults).expect("configs serialize");
    merge(&mut tree, file, "")?;
    for (path, v) in flags {
        if v.is_null() {
            continue;
        }
        let mut patch = v.clone();
        for key in path.rsplit('.') {
            patch = Value::Object([(key.to_string(), patch)].into_iter().collect());
        }
        merge(&mut tree, &patch, "")?;
    }
    let value = serde_json::from_value(tree.clone()).map_err(|e| CliError::Usage(format!("configuration: {e}")))?;
    Ok((value, tree))
}
