use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sample::sample_certificate;
use super::world::write_world;
use super::{SynthError, World};
use crate::certificate::{write_dataset, Certificate};
use crate::eval::{rule_baseline, BaselineAccuracy};
use crate::icd10::Code;

/// Chi-square critical value for one degree of freedom at p = 0.001.
pub const YEAR_EFFECT_THRESHOLD: f64 = 10.828;

/// Records held out from every year of death.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation_per_year: usize,
    pub test_per_year: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub records: usize,
    pub seed: u64,
    pub split: SplitSpec,
    /// Rule-coder baselines per split, plus `all`.
    pub baselines: BTreeMap<String, BaselineAccuracy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub train: Vec<Certificate>,
    pub validation: Vec<Certificate>,
    pub test: Vec<Certificate>,
    pub summary: DataSummary,
}

/// Samples `n` certificates and splits them by year: within each year the
/// first `validation_per_year` records go to validation, the next
/// `test_per_year` to test and the rest to training.
pub fn generate_dataset(world: &World, n: usize, split: SplitSpec, seed: u64) -> Result<GeneratedData, SynthError> {
    let years = world.years();
    let held_out = (split.validation_per_year + split.test_per_year) * years.states;
    if held_out > n {
        return Err(SynthError::Split(format!(
            "{held_out} held-out records requested from {n}"
        )));
    }
    let records = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_certificate(world, seed, i))
        .collect::<Result<Vec<_>, _>>()?;

    let mut seen: BTreeMap<u16, usize> = BTreeMap::new();
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for c in records {
        let k = seen.entry(c.demo.year).or_default();
        if *k < split.validation_per_year {
            validation.push(c);
        } else if *k < split.validation_per_year + split.test_per_year {
            test.push(c);
        } else {
            train.push(c);
        }
        *k += 1;
    }
    for y in years.years() {
        let have = seen.get(&y).copied().unwrap_or(0);
        if have < split.validation_per_year + split.test_per_year {
            return Err(SynthError::Split(format!(
                "year {y} has {have} records, fewer than the {} held out per year",
                split.validation_per_year + split.test_per_year
            )));
        }
    }

    let mut baselines = BTreeMap::new();
    for (name, part) in [("train", &train), ("validation", &validation), ("test", &test)] {
        if !part.is_empty() {
            baselines.insert(name.to_string(), rule_baseline(part).expect("generated records carry labels"));
        }
    }
    let all: Vec<Certificate> = train.iter().chain(&validation).chain(&test).cloned().collect();
    baselines.insert("all".into(), rule_baseline(&all).expect("non-empty"));

    Ok(GeneratedData {
        train,
        validation,
        test,
        summary: DataSummary {
            records: n,
            seed,
            split,
            baselines,
        },
    })
}

/// Writes `train.tsv`, `validation.tsv`, `test.tsv`, `world.json` and
/// `summary.json` into `dir`.
pub fn write_generated(data: &GeneratedData, world: &World, dir: &Path) -> Result<(), SynthError> {
    let io = |e: std::io::Error| SynthError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    write_dataset(&data.train, &dir.join("train.tsv"))?;
    write_dataset(&data.validation, &dir.join("validation.tsv"))?;
    write_dataset(&data.test, &dir.join("test.tsv"))?;
    write_world(world, &dir.join("world.json"))?;
    let mut text = serde_json::to_string_pretty(&data.summary).expect("summaries serialize");
    text.push('\n');
    std::fs::write(dir.join("summary.json"), text).map_err(io)?;
    Ok(())
}

/// Pearson chi-square of the 2x2 table (year before / from `split_year`)
/// x (label is / is not `code`).
pub fn label_year_chi_square(certs: &[Certificate], code: Code, split_year: u16) -> f64 {
    let mut table = [[0f64; 2]; 2];
    for c in certs {
        let row = usize::from(c.demo.year >= split_year);
        let col = usize::from(c.label == Some(code));
        table[row][col] += 1.0;
    }
    let n: f64 = table.iter().flatten().sum();
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    if rows.contains(&0.0) || cols.contains(&0.0) {
        return 0.0;
    }
    let mut chi = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            let e = rows[r] * cols[c] / n;
            chi += (table[r][c] - e).powi(2) / e;
        }
    }
    chi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icd10::code;
    use crate::synth::{build_world, WorldKnobs};
    use std::collections::BTreeSet;

    const SPLIT: SplitSpec = SplitSpec {
        validation_per_year: 10,
        test_per_year: 20,
    };

    #[test]
    fn splits_partition_ids() {
        let w = build_world(0, WorldKnobs::default()).unwrap();
        let d = generate_dataset(&w, 2000, SPLIT, 0).unwrap();
        assert_eq!(d.validation.len(), 160);
        assert_eq!(d.test.len(), 320);
        assert_eq!(d.train.len() + d.validation.len() + d.test.len(), 2000);
        let ids: BTreeSet<&str> = d.train.iter().chain(&d.validation).chain(&d.test).map(|c| c.id.as_str()).collect();
        assert_eq!(ids.len(), 2000);
        for y in w.years().years() {
            assert_eq!(d.test.iter().filter(|c| c.demo.year == y).count(), 20);
        }
        assert!(generate_dataset(&w, 100, SPLIT, 0).is_err());
    }

    #[test]
    fn default_noise_orders_baselines() {
        let w = build_world(0, WorldKnobs::default()).unwrap();
        let d = generate_dataset(&w, 4000, SPLIT, 1).unwrap();
        let b = &d.summary.baselines["all"];
        assert!(b.reject_rate > 0.0);
        assert!(b.non_rejected.unwrap() > b.overall);
    }

    #[test]
    fn noiseless_world_is_exact_off_ambiguity() {
        let w = build_world(0, WorldKnobs::noiseless()).unwrap();
        let d = generate_dataset(&w, 3000, SPLIT, 2).unwrap();
        let b = &d.summary.baselines["all"];
        assert_eq!(b.non_rejected, Some(1.0));
    }

    #[test]
    fn drift_rule_shows_in_year_strata() {
        let w = build_world(0, WorldKnobs::default()).unwrap();
        let d = generate_dataset(&w, 10_000, SplitSpec { validation_per_year: 0, test_per_year: 0 }, 3).unwrap();
        let chi = label_year_chi_square(&d.train, code("I11"), w.knobs.drift_year);
        assert!(chi > YEAR_EFFECT_THRESHOLD, "{chi}");
        // a rule-free code shows no such effect in a noiseless reference
        let flat = label_year_chi_square(&d.train, code("X42"), w.knobs.drift_year);
        assert!(flat < chi);
    }

    #[test]
    fn chi_square_oracle() {
        // table [[30, 10], [20, 40]]: chi2 = 16.6667
        let mut certs = Vec::new();
        let w = build_world(0, WorldKnobs::default()).unwrap();
        let base = sample_certificate(&w, 0, 0).unwrap();
        let mut push = |year: u16, hit: bool, k: usize| {
            for _ in 0..k {
                let mut c = base.clone();
                c.demo.year = year;
                c.label = Some(if hit { code("I11") } else { code("I10") });
                certs.push(c);
            }
        };
        push(2005, false, 30);
        push(2005, true, 10);
        push(2010, false, 20);
        push(2010, true, 40);
        let chi = label_year_chi_square(&certs, code("I11"), 2009);
        assert!((chi - 50.0 / 3.0).abs() < 1e-9, "{chi}");
    }

    #[test]
    fn files_are_reproducible() {
        let w = build_world(0, WorldKnobs::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for sub in ["a", "b"] {
            let d = generate_dataset(&w, 600, SplitSpec { validation_per_year: 2, test_per_year: 3 }, 8).unwrap();
            write_generated(&d, &w, &dir.path().join(sub)).unwrap();
        }
        for f in ["train.tsv", "validation.tsv", "test.tsv", "world.json", "summary.json"] {
            let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
            let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }
}
