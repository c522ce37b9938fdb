//! Death-certificate data model, model-facing encodings and the tab-separated
//! dataset format.

mod dataset;
mod encode;

pub use dataset::{read_dataset, read_dataset_checked, write_dataset, DatasetRead, UnknownCode, DATASET_HEADER};
pub use encode::{encode_demographics, encode_grid, CodeGrid, DemographicOneHots};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::icd10::{Code, Icd10Error};

/// Number of certificate lines: four Part I lines then two Part II lines.
pub const LINES: usize = 6;
pub const PART_ONE_LINES: usize = 4;
pub const DEFAULT_WIDTH: usize = 20;

pub const GENDER_STATES: usize = 2;
pub const AGE_CLASSES: usize = 25;
pub const DEFAULT_YEAR_BASE: u16 = 2000;
pub const DEFAULT_YEAR_STATES: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum CertificateError {
    #[error(transparent)]
    Code(#[from] Icd10Error),
    #[error("causal chain has no Part I code")]
    EmptyPartOne,
    #[error("line {line} holds {len} codes but the grid width is {width}; encode with a larger width (at least {len})")]
    LineTooLong { line: usize, len: usize, width: usize },
    #[error("code {code} on line {line} is out of vocabulary")]
    OutOfVocabulary { code: Code, line: usize },
    #[error("label {0} is out of vocabulary")]
    LabelOutOfVocabulary(Code),
    #[error("{field} = {value} is outside its range {range}")]
    CategoryOutOfRange {
        field: &'static str,
        value: i64,
        range: String,
    },
    #[error("grid width must be positive")]
    ZeroWidth,
    #[error("{path}: line {line}, field {field}: {message}")]
    Record {
        path: String,
        line: u64,
        field: String,
        message: String,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Year categories: `states` consecutive years starting at `base`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub base: u16,
    pub states: usize,
}

impl Default for YearRange {
    fn default() -> Self {
        YearRange {
            base: DEFAULT_YEAR_BASE,
            states: DEFAULT_YEAR_STATES,
        }
    }
}

impl YearRange {
    pub fn last(&self) -> u16 {
        self.base + self.states as u16 - 1
    }

    pub fn category(&self, year: u16) -> Result<usize, CertificateError> {
        if year < self.base || year > self.last() {
            return Err(CertificateError::CategoryOutOfRange {
                field: "year",
                value: year as i64,
                range: format!("{}..={}", self.base, self.last()),
            });
        }
        Ok((year - self.base) as usize)
    }

    pub fn years(&self) -> impl Iterator<Item = u16> {
        self.base..=self.last()
    }
}

/// Gender (1 or 2), age class (0..25) and calendar year of death.
///
/// Age classes: 0 and 1 split the first year of life (under 28 days, 28 days
/// to 1 year), 2 is ages 1-4, 3..=23 are the five-year bands 5-9 through
/// 105-109 and 24 is 110 and over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Demographics {
    pub gender: u8,
    pub age_class: u8,
    pub year: u16,
}

impl Demographics {
    pub fn new(gender: u8, age_class: u8, year: u16) -> Result<Self, CertificateError> {
        let d = Demographics {
            gender,
            age_class,
            year,
        };
        d.validate_static()?;
        Ok(d)
    }

    fn validate_static(&self) -> Result<(), CertificateError> {
        if !(1..=GENDER_STATES as u8).contains(&self.gender) {
            return Err(CertificateError::CategoryOutOfRange {
                field: "gender",
                value: self.gender as i64,
                range: "1..=2".into(),
            });
        }
        if self.age_class as usize >= AGE_CLASSES {
            return Err(CertificateError::CategoryOutOfRange {
                field: "age_class",
                value: self.age_class as i64,
                range: "0..=24".into(),
            });
        }
        Ok(())
    }

    /// Age class for an age expressed in days.
    pub fn age_class_for_days(days: u32) -> u8 {
        let years = days / 365;
        match (days, years) {
            (0..=27, _) => 0,
            (_, 0) => 1,
            (_, 1..=4) => 2,
            (_, y) if y >= 110 => 24,
            (_, y) => 3 + ((y - 5) / 5) as u8,
        }
    }
}

/// The six certificate lines. Lines 1-4 run from immediate to underlying
/// causes; lines 5-6 hold contributing conditions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CausalChain {
    lines: [Vec<Code>; LINES],
}

impl CausalChain {
    pub fn new(lines: [Vec<Code>; LINES]) -> Result<Self, CertificateError> {
        if lines[..PART_ONE_LINES].iter().all(Vec::is_empty) {
            return Err(CertificateError::EmptyPartOne);
        }
        Ok(CausalChain { lines })
    }

    /// Builds a chain from Part I and Part II line lists, padding with empty
    /// lines.
    pub fn from_parts(part_one: &[Vec<Code>], part_two: &[Vec<Code>]) -> Result<Self, CertificateError> {
        assert!(part_one.len() <= PART_ONE_LINES && part_two.len() <= LINES - PART_ONE_LINES);
        let mut lines: [Vec<Code>; LINES] = Default::default();
        for (i, l) in part_one.iter().enumerate() {
            lines[i] = l.clone();
        }
        for (i, l) in part_two.iter().enumerate() {
            lines[PART_ONE_LINES + i] = l.clone();
        }
        CausalChain::new(lines)
    }

    pub fn lines(&self) -> &[Vec<Code>; LINES] {
        &self.lines
    }

    pub fn part_one(&self) -> &[Vec<Code>] {
        &self.lines[..PART_ONE_LINES]
    }

    pub fn part_two(&self) -> &[Vec<Code>] {
        &self.lines[PART_ONE_LINES..]
    }

    pub fn code_count(&self) -> usize {
        self.lines.iter().map(Vec::len).sum()
    }

    pub fn codes(&self) -> impl Iterator<Item = &Code> {
        self.lines.iter().flatten()
    }

    pub fn max_line_len(&self) -> usize {
        self.lines.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Output of the rule-based coder: a code or a rejection for manual coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleOutput {
    Code(Code),
    Reject,
}

impl RuleOutput {
    pub fn code(&self) -> Option<Code> {
        match self {
            RuleOutput::Code(c) => Some(*c),
            RuleOutput::Reject => None,
        }
    }
}

impl fmt::Display for RuleOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleOutput::Code(c) => write!(f, "{c}"),
            RuleOutput::Reject => f.write_str("REJECT"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub id: String,
    pub chain: CausalChain,
    pub demo: Demographics,
    /// Underlying cause of death, when known.
    pub label: Option<Code>,
    /// What the rule coder produced for this record, when recorded.
    pub rule_output: Option<RuleOutput>,
}

impl Certificate {
    /// The officially coded cause: the rule coder's output, with rejects
    /// resolved by the (manually coded) label.
    pub fn official_code(&self) -> Option<Code> {
        match self.rule_output {
            Some(RuleOutput::Code(c)) => Some(c),
            _ => self.label,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icd10::code;

    #[test]
    fn chain_requires_part_one() {
        let lines: [Vec<Code>; LINES] = [vec![], vec![], vec![], vec![], vec![code("E11")], vec![]];
        assert!(matches!(CausalChain::new(lines), Err(CertificateError::EmptyPartOne)));
    }

    #[test]
    fn demographics_ranges() {
        assert!(Demographics::new(1, 0, 2000).is_ok());
        assert!(Demographics::new(0, 0, 2000).is_err());
        assert!(Demographics::new(3, 0, 2000).is_err());
        assert!(Demographics::new(1, 25, 2000).is_err());
    }

    #[test]
    fn age_bands() {
        assert_eq!(Demographics::age_class_for_days(3), 0);
        assert_eq!(Demographics::age_class_for_days(200), 1);
        assert_eq!(Demographics::age_class_for_days(365 * 3), 2);
        assert_eq!(Demographics::age_class_for_days(365 * 5), 3);
        assert_eq!(Demographics::age_class_for_days(365 * 9 + 100), 3);
        assert_eq!(Demographics::age_class_for_days(365 * 10 + 10), 4);
        assert_eq!(Demographics::age_class_for_days(365 * 107 + 10), 23);
        assert_eq!(Demographics::age_class_for_days(365 * 111), 24);
    }

    #[test]
    fn official_code_falls_back_to_label() {
        let chain = CausalChain::from_parts(&[vec![code("I46")]], &[]).unwrap();
        let mut c = Certificate {
            id: "1".into(),
            chain,
            demo: Demographics::new(1, 10, 2005).unwrap(),
            label: Some(code("I21")),
            rule_output: Some(RuleOutput::Reject),
        };
        assert_eq!(c.official_code(), Some(code("I21")));
        c.rule_output = Some(RuleOutput::Code(code("I46")));
        assert_eq!(c.official_code(), Some(code("I46")));
    }
}
