//! ICD-10 codes, the 22-chapter table and vocabulary indexing.

mod chapter;
mod code;
mod vocab;

pub use chapter::{chapter_of, CategoryRange, Chapter, ChapterTable, CHAPTER_COUNT};
pub use code::{code, Code};
pub use vocab::{Vocabulary, PAD};

#[derive(Debug, thiserror::Error)]
pub enum Icd10Error {
    #[error("invalid ICD-10 code {text:?}: {reason}")]
    InvalidCode { text: String, reason: String },
    #[error("code {0} is in an unassigned chapter")]
    UnassignedChapter(Code),
    #[error("code {0} is out of vocabulary")]
    OutOfVocabulary(Code),
    #[error("cannot build a vocabulary from an empty code collection")]
    EmptyVocabulary,
    #[error("index 0 is the padding sentinel, not a code")]
    PadIndex,
    #[error("vocabulary index {index} out of range (V = {size})")]
    IndexOutOfRange { index: u32, size: usize },
    #[error("chapter table: {0}")]
    ChapterTable(String),
}
