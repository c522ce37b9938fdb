use std::io::Read;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{Code, Icd10Error};

pub const CHAPTER_COUNT: usize = 22;

const BUNDLED_CHAPTERS: &str = include_str!("../../data/icd10_chapters.csv");

/// Inclusive range of three-symbol categories, e.g. `S00..=T98`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryRange {
    pub start: Code,
    pub end: Code,
}

impl CategoryRange {
    fn key(code: &Code) -> (char, u32) {
        (code.letter(), code.category_number())
    }

    pub fn contains(&self, code: &Code) -> bool {
        let k = Self::key(code);
        Self::key(&self.start) <= k && k <= Self::key(&self.end)
    }

    fn overlaps(&self, other: &CategoryRange) -> bool {
        Self::key(&self.start) <= Self::key(&other.end)
            && Self::key(&other.start) <= Self::key(&self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chapter {
    /// 1-based chapter number (I..XXII).
    pub index: u8,
    pub name: String,
    pub ranges: Vec<CategoryRange>,
}

impl Chapter {
    pub fn roman(&self) -> &'static str {
        ROMAN[self.index as usize - 1]
    }
}

const ROMAN: [&str; CHAPTER_COUNT] = [
    "I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X", "XI", "XII", "XIII", "XIV", "XV",
    "XVI", "XVII", "XVIII", "XIX", "XX", "XXI", "XXII",
];

#[derive(Debug, Deserialize)]
struct ChapterRow {
    chapter_index: u8,
    name: String,
    range_start: String,
    range_end: String,
}

/// The 22 ICD-10 chapters with their category ranges. Immutable once built.
#[derive(Debug, Clone)]
pub struct ChapterTable {
    chapters: Vec<Chapter>,
}

impl ChapterTable {
    /// Reads a chapter table from CSV with header
    /// `chapter_index,name,range_start,range_end`, one row per range.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, Icd10Error> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Icd10Error::ChapterTable(e.to_string()))?
            .clone();
        let expected = ["chapter_index", "name", "range_start", "range_end"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Icd10Error::ChapterTable(format!(
                "header must be {}, found {}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut chapters: Vec<Chapter> = Vec::new();
        for row in rdr.deserialize::<ChapterRow>() {
            let row = row.map_err(|e| Icd10Error::ChapterTable(e.to_string()))?;
            let range = CategoryRange {
                start: Code::parse(&row.range_start)?.category(),
                end: Code::parse(&row.range_end)?.category(),
            };
            if CategoryRange::key(&range.start) > CategoryRange::key(&range.end) {
                return Err(Icd10Error::ChapterTable(format!(
                    "chapter {}: range {}-{} is reversed",
                    row.chapter_index, range.start, range.end
                )));
            }
            match chapters.iter_mut().find(|c| c.index == row.chapter_index) {
                Some(ch) => ch.ranges.push(range),
                None => chapters.push(Chapter {
                    index: row.chapter_index,
                    name: row.name,
                    ranges: vec![range],
                }),
            }
        }
        chapters.sort_by_key(|c| c.index);
        let indices: Vec<u8> = chapters.iter().map(|c| c.index).collect();
        if indices != (1..=CHAPTER_COUNT as u8).collect::<Vec<_>>() {
            return Err(Icd10Error::ChapterTable(format!(
                "expected chapters 1..=22, found {indices:?}"
            )));
        }
        let all: Vec<(u8, &CategoryRange)> = chapters
            .iter()
            .flat_map(|c| c.ranges.iter().map(move |r| (c.index, r)))
            .collect();
        for (i, (ci, a)) in all.iter().enumerate() {
            for (cj, b) in &all[i + 1..] {
                if a.overlaps(b) {
                    return Err(Icd10Error::ChapterTable(format!(
                        "chapters {ci} and {cj} overlap ({}-{} / {}-{})",
                        a.start, a.end, b.start, b.end
                    )));
                }
            }
        }
        Ok(ChapterTable { chapters })
    }

    /// The WHO chapter table shipped with the crate.
    pub fn bundled() -> &'static ChapterTable {
        static TABLE: OnceLock<ChapterTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            ChapterTable::from_csv(BUNDLED_CHAPTERS.as_bytes()).expect("bundled chapter table")
        })
    }

    pub fn chapters(&self) -> &[Chapter] {
        &self.chapters
    }

    pub fn get(&self, index: u8) -> Option<&Chapter> {
        self.chapters.get((index as usize).checked_sub(1)?)
    }

    pub fn chapter_of(&self, code: &Code) -> Result<&Chapter, Icd10Error> {
        self.chapters
            .iter()
            .find(|c| c.ranges.iter().any(|r| r.contains(code)))
            .ok_or(Icd10Error::UnassignedChapter(*code))
    }
}

/// Chapter of `code` according to the bundled WHO table.
pub fn chapter_of(code: &Code) -> Result<&'static Chapter, Icd10Error> {
    ChapterTable::bundled().chapter_of(code)
}
