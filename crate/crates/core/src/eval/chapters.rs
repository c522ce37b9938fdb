use serde::{Deserialize, Serialize};

use super::metrics::correctness;
use super::EvalError;
use crate::icd10::{chapter_of, ChapterTable, Code, CHAPTER_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChapterRate {
    pub chapter: u8,
    pub roman: String,
    pub name: String,
    /// Records whose label falls in this chapter.
    pub records: usize,
    pub errors: usize,
    pub prevalence: f64,
    /// `None` for chapters absent from the labels.
    pub error_rate: Option<f64>,
}

impl ChapterRate {
    pub fn represented(&self) -> bool {
        self.records > 0
    }
}

fn chapter_index(c: &Code) -> Result<usize, EvalError> {
    Ok(chapter_of(c)?.index as usize - 1)
}

/// Label prevalence and top-1 error rate for each of the 22 chapters.
pub fn per_chapter_rates(preds: &[Code], labels: &[Code]) -> Result<Vec<ChapterRate>, EvalError> {
    let correct = correctness(preds, labels)?;
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut records = [0usize; CHAPTER_COUNT];
    let mut errors = [0usize; CHAPTER_COUNT];
    for (l, ok) in labels.iter().zip(&correct) {
        let i = chapter_index(l)?;
        records[i] += 1;
        errors[i] += usize::from(!ok);
    }
    let n = labels.len() as f64;
    Ok(ChapterTable::bundled()
        .chapters()
        .iter()
        .enumerate()
        .map(|(i, ch)| ChapterRate {
            chapter: ch.index,
            roman: ch.roman().to_string(),
            name: ch.name.clone(),
            records: records[i],
            errors: errors[i],
            prevalence: records[i] as f64 / n,
            error_rate: (records[i] > 0).then(|| errors[i] as f64 / records[i] as f64),
        })
        .collect())
}

/// Mispredictions by (true chapter, predicted chapter). Errors that stay
/// inside their chapter are kept apart in `within_chapter`, so the matrix
/// diagonal is always zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub within_chapter: Vec<u64>,
}

impl ConfusionMatrix {
    /// All errors of true chapter `row` (0-based).
    pub fn row_errors(&self, row: usize) -> u64 {
        self.counts[row].iter().sum::<u64>() + self.within_chapter[row]
    }

    pub fn total(&self) -> u64 {
        (0..CHAPTER_COUNT).map(|r| self.row_errors(r)).sum()
    }

    pub fn cross_chapter(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn chapter_confusion(preds: &[Code], labels: &[Code]) -> Result<ConfusionMatrix, EvalError> {
    let correct = correctness(preds, labels)?;
    let mut m = ConfusionMatrix {
        counts: vec![vec![0; CHAPTER_COUNT]; CHAPTER_COUNT],
        within_chapter: vec![0; CHAPTER_COUNT],
    };
    for ((p, l), ok) in preds.iter().zip(labels).zip(correct) {
        if ok {
            continue;
        }
        let (r, c) = (chapter_index(l)?, chapter_index(p)?);
        if r == c {
            m.within_chapter[r] += 1;
        } else {
            m.counts[r][c] += 1;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icd10::code;
    use proptest::prelude::*;

    const POOL: [&str; 8] = ["A41", "B20", "C34", "I10", "I21", "J18", "X42", "F110"];

    #[test]
    fn single_chapter() {
        let labels = [code("I10"), code("I21")];
        let preds = [code("I10"), code("J18")];
        let rates = per_chapter_rates(&preds, &labels).unwrap();
        assert_eq!(rates[8].prevalence, 1.0);
        assert_eq!(rates[8].error_rate, Some(0.5));
        assert_eq!(rates.iter().filter(|r| !r.represented()).count(), 21);
        assert_eq!(rates[9].error_rate, None);
        let m = chapter_confusion(&preds, &labels).unwrap();
        assert_eq!(m.counts[8][9], 1);
        assert_eq!(m.total(), 1);
    }

    proptest! {
        #[test]
        fn brute_force_oracle(pairs in prop::collection::vec((0usize..8, 0usize..8), 1..80)) {
            let preds: Vec<Code> = pairs.iter().map(|&(p, _)| code(POOL[p])).collect();
            let labels: Vec<Code> = pairs.iter().map(|&(_, l)| code(POOL[l])).collect();
            let rates = per_chapter_rates(&preds, &labels).unwrap();
            let m = chapter_confusion(&preds, &labels).unwrap();
            let mut errors_total = 0;
            for ch in 1..=CHAPTER_COUNT as u8 {
                let idx: Vec<usize> = (0..labels.len())
                    .filter(|&i| chapter_of(&labels[i]).unwrap().index == ch)
                    .collect();
                let errs = idx.iter().filter(|&&i| preds[i] != labels[i]).count();
                let r = &rates[ch as usize - 1];
                prop_assert_eq!(r.records, idx.len());
                prop_assert_eq!(r.errors, errs);
                if !idx.is_empty() {
                    prop_assert_eq!(r.error_rate, Some(errs as f64 / idx.len() as f64));
                }
                prop_assert_eq!(m.counts[ch as usize - 1][ch as usize - 1], 0);
                prop_assert_eq!(m.row_errors(ch as usize - 1), errs as u64);
                errors_total += errs;
            }
            let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            prop_assert_eq!(m.total() as usize + correct, labels.len());
            prop_assert_eq!(m.total() as usize, errors_total);
        }
    }
}
