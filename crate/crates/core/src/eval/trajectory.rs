use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::icd10::Code;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeSetEntry {
    Exact(Code),
    /// Matches every code whose text starts with this string.
    Prefix(String),
}

/// Codes of interest for a recoding study, e.g. `X42, F11*`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSet {
    pub entries: Vec<CodeSetEntry>,
}

impl CodeSet {
    /// Parses entries separated by commas, whitespace or newlines; `#`
    /// starts a comment. A trailing `*` marks a prefix.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
                entries.push(Self::entry(tok)?);
            }
        }
        if entries.is_empty() {
            return Err(EvalError::EmptyCodeSet);
        }
        Ok(CodeSet { entries })
    }

    fn entry(tok: &str) -> Result<CodeSetEntry, EvalError> {
        let bad = || EvalError::CodeSetEntry(tok.to_string());
        if let Some(prefix) = tok.strip_suffix('*') {
            let mut chars = prefix.chars();
            let ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic())
                && prefix.len() <= 4
                && chars.all(|c| c.is_ascii_digit());
            if !ok {
                return Err(bad());
            }
            return Ok(CodeSetEntry::Prefix(prefix.to_ascii_uppercase()));
        }
        Code::parse(tok).map(CodeSetEntry::Exact).map_err(|_| bad())
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn matches(&self, code: &Code) -> bool {
        self.entries.iter().any(|e| match e {
            CodeSetEntry::Exact(c) => c == code,
            CodeSetEntry::Prefix(p) => code.starts_with(p),
        })
    }
}

/// Matching records per year.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrajectorySeries {
    pub counts: BTreeMap<u16, u64>,
}

impl TrajectorySeries {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Counts records `(year, code)` matching `set`; every year in `years`
/// appears in the result, with zero if nothing matched.
pub fn codeset_trajectory<'a>(
    records: impl IntoIterator<Item = (u16, &'a Code)>,
    set: &CodeSet,
    years: impl IntoIterator<Item = u16>,
) -> TrajectorySeries {
    let mut counts: BTreeMap<u16, u64> = years.into_iter().map(|y| (y, 0)).collect();
    for (year, code) in records {
        if set.matches(code) {
            *counts.entry(year).or_default() += 1;
        }
    }
    TrajectorySeries { counts }
}

/// Years where the reference count exceeds the series. A reference that is
/// a lower bound (a non-exhaustive source) flags undercounting years.
pub fn compare_trajectories(series: &TrajectorySeries, reference: &TrajectorySeries) -> Result<Vec<u16>, EvalError> {
    let shared: Vec<u16> = reference
        .counts
        .keys()
        .filter(|y| series.counts.contains_key(y))
        .copied()
        .collect();
    if shared.is_empty() {
        return Err(EvalError::DisjointYears);
    }
    Ok(shared
        .into_iter()
        .filter(|y| reference.counts[y] > series.counts[y])
        .collect())
}

#[derive(Debug, Deserialize)]
struct ReferenceRow {
    year: u16,
    count: u64,
}

/// Reads a reference series from CSV with header `year,count`.
pub fn read_reference(path: &Path) -> Result<TrajectorySeries, EvalError> {
    let io = |e: csv::Error| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let mut counts = BTreeMap::new();
    for row in r.deserialize::<ReferenceRow>() {
        let row = row.map_err(io)?;
        counts.insert(row.year, row.count);
    }
    Ok(TrajectorySeries { counts })
}

/// Writes named series side by side: `year,<name>,...`. Missing years are
/// left blank.
pub fn write_trajectories(path: &Path, series: &[(&str, &TrajectorySeries)]) -> Result<(), EvalError> {
    let io = |e: csv::Error| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["year".to_string()];
    header.extend(series.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header).map_err(io)?;
    let years: std::collections::BTreeSet<u16> = series.iter().flat_map(|(_, s)| s.counts.keys().copied()).collect();
    for y in years {
        let mut rec = vec![y.to_string()];
        rec.extend(series.iter().map(|(_, s)| s.counts.get(&y).map(u64::to_string).unwrap_or_default()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
