use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Code, Icd10Error};

/// Index reserved for grid padding. Never a code, never a label.
pub const PAD: u32 = 0;

/// Sorted, deduplicated code list with indices `1..=V`; index 0 is [`PAD`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Code>", into = "Vec<Code>")]
pub struct Vocabulary {
    codes: Vec<Code>,
    #[serde(skip)]
    lookup: HashMap<Code, u32>,
}

impl Vocabulary {
    pub fn build<I: IntoIterator<Item = Code>>(codes: I) -> Result<Self, Icd10Error> {
        let mut codes: Vec<Code> = codes.into_iter().collect();
        if codes.is_empty() {
            return Err(Icd10Error::EmptyVocabulary);
        }
        codes.sort();
        codes.dedup();
        let lookup = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, i as u32 + 1))
            .collect();
        Ok(Vocabulary { codes, lookup })
    }

    /// Number of codes, V (PAD excluded).
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index_of(&self, code: &Code) -> Result<u32, Icd10Error> {
        self.lookup
            .get(code)
            .copied()
            .ok_or(Icd10Error::OutOfVocabulary(*code))
    }

    pub fn contains(&self, code: &Code) -> bool {
        self.lookup.contains_key(code)
    }

    pub fn code_at(&self, index: u32) -> Result<Code, Icd10Error> {
        if index == PAD {
            return Err(Icd10Error::PadIndex);
        }
        self.codes
            .get(index as usize - 1)
            .copied()
            .ok_or(Icd10Error::IndexOutOfRange {
                index,
                size: self.codes.len(),
            })
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }
}

impl TryFrom<Vec<Code>> for Vocabulary {
    type Error = Icd10Error;

    fn try_from(codes: Vec<Code>) -> Result<Self, Self::Error> {
        Vocabulary::build(codes)
    }
}

impl From<Vocabulary> for Vec<Code> {
    fn from(v: Vocabulary) -> Self {
        v.codes
    }
}
