use std::path::Path;

use serde::{Deserialize, Serialize};

use super::baseline::{rule_baseline, BaselineAccuracy};
use super::calibration::{calibration, Calibration};
use super::chapters::{chapter_confusion, per_chapter_rates, ChapterRate, ConfusionMatrix};
use super::metrics::{correctness, second_choice_hits, topk_hits, Bootstrap, Estimate};
use super::EvalError;
use crate::autodiff::Tensor;
use crate::certificate::Certificate;
use crate::icd10::{ChapterTable, Code, Vocabulary};
use crate::model::topk_indices;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: usize,
    /// Interval method; always "percentile".
    pub ci_method: String,
    pub bootstrap: Bootstrap,
    pub accuracy: Estimate,
    pub top2_accuracy: Estimate,
    /// `None` when the model made no error.
    pub second_choice_on_errors: Option<Estimate>,
    /// Rule coder on the same records, when they carry its output.
    pub rule_baseline: Option<BaselineAccuracy>,
    pub chapters: Vec<ChapterRate>,
    pub confusion: ConfusionMatrix,
    pub calibration: Calibration,
}

/// Top-1 codes of each probability row.
pub(crate) fn top1_codes(probs: &Tensor, vocab: &Vocabulary) -> Result<Vec<Code>, EvalError> {
    let v = probs.shape()[1];
    (0..probs.shape()[0])
        .map(|i| Ok(vocab.code_at(topk_indices(&probs.data()[i * v..(i + 1) * v], 1)[0] as u32 + 1)?))
        .collect()
}

/// Every metric for model probabilities `probs` (`[N, V]`) against
/// vocabulary-index `labels`.
pub fn evaluate(
    probs: &Tensor,
    labels: &[u32],
    vocab: &Vocabulary,
    certs: Option<&[Certificate]>,
    bootstrap: Bootstrap,
) -> Result<MetricReport, EvalError> {
    let top2 = topk_hits(probs, labels, 2.min(vocab.len()))?;
    let preds = top1_codes(probs, vocab)?;
    let label_codes = labels.iter().map(|&l| vocab.code_at(l)).collect::<Result<Vec<_>, _>>()?;
    let correct = correctness(&preds, &label_codes)?;
    let second = match second_choice_hits(probs, labels) {
        Ok(hits) => Some(bootstrap.estimate(&hits)?),
        Err(EvalError::NoErrors) => None,
        Err(e) => return Err(e),
    };
    let baseline = match certs {
        Some(c) if c.iter().all(|x| x.rule_output.is_some() && x.label.is_some()) => Some(rule_baseline(c)?),
        _ => None,
    };
    Ok(MetricReport {
        records: labels.len(),
        ci_method: "percentile".into(),
        bootstrap,
        accuracy: bootstrap.estimate(&correct)?,
        top2_accuracy: bootstrap.estimate(&top2)?,
        second_choice_on_errors: second,
        rule_baseline: baseline,
        chapters: per_chapter_rates(&preds, &label_codes)?,
        confusion: chapter_confusion(&preds, &label_codes)?,
        calibration: calibration(probs, labels)?,
    })
}

/// Writes `summary.json`, `per_chapter.csv`, `confusion.csv` and
/// `calibration.csv` into `dir`.
pub fn write_report(report: &MetricReport, dir: &Path) -> Result<(), EvalError> {
    let err = |p: &Path, m: String| EvalError::Io {
        path: p.display().to_string(),
        message: m,
    };
    std::fs::create_dir_all(dir).map_err(|e| err(dir, e.to_string()))?;

    let summary = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
    text.push('\n');
    std::fs::write(&summary, text).map_err(|e| err(&summary, e.to_string()))?;

    let path = dir.join("per_chapter.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| err(&path, e.to_string()))?;
    let rows = std::iter::once(
        ["chapter", "roman", "name", "records", "prevalence", "errors", "error_rate", "represented"].map(String::from),
    )
    .chain(report.chapters.iter().map(|c| {
        [
            c.chapter.to_string(),
            c.roman.clone(),
            c.name.clone(),
            c.records.to_string(),
            c.prevalence.to_string(),
            c.errors.to_string(),
            c.error_rate.map(|r| r.to_string()).unwrap_or_default(),
            c.represented().to_string(),
        ]
    }));
    for r in rows {
        w.write_record(&r).map_err(|e| err(&path, e.to_string()))?;
    }
    w.flush().map_err(|e| err(&path, e.to_string()))?;

    let path = dir.join("confusion.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| err(&path, e.to_string()))?;
    let romans: Vec<String> = ChapterTable::bundled().chapters().iter().map(|c| c.roman().to_string()).collect();
    let mut header = vec!["true_chapter".to_string()];
    header.extend(romans.iter().cloned());
    header.push("within_chapter".into());
    w.write_record(&header).map_err(|e| err(&path, e.to_string()))?;
    for (i, row) in report.confusion.counts.iter().enumerate() {
        let mut rec = vec![romans[i].clone()];
        rec.extend(row.iter().map(u64::to_string));
        rec.push(report.confusion.within_chapter[i].to_string());
        w.write_record(&rec).map_err(|e| err(&path, e.to_string()))?;
    }
    w.flush().map_err(|e| err(&path, e.to_string()))?;

    let path = dir.join("calibration.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| err(&path, e.to_string()))?;
    for b in &report.calibration.bins {
        w.serialize(b).map_err(|e| err(&path, e.to_string()))?;
    }
    w.flush().map_err(|e| err(&path, e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icd10::code;

    #[test]
    fn report_files() {
        let vocab = Vocabulary::build(["I10", "I21", "J18"].map(code)).unwrap();
        let probs = Tensor::new(&[3, 3], vec![0.7, 0.2, 0.1, 0.5, 0.3, 0.2, 0.1, 0.1, 0.8]).unwrap();
        let labels = [1, 2, 3];
        let r = evaluate(&probs, &labels, &vocab, None, Bootstrap { resamples: 50, seed: 1 }).unwrap();
        assert!((r.accuracy.value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.top2_accuracy.value, 1.0);
        assert_eq!(r.second_choice_on_errors.unwrap().value, 1.0);
        assert_eq!(r.confusion.within_chapter[8], 1);
        assert_eq!(r.confusion.total(), 1);
        let dir = tempfile::tempdir().unwrap();
        write_report(&r, dir.path()).unwrap();
        let conf = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
        assert_eq!(conf.lines().count(), 23);
        let cal = std::fs::read_to_string(dir.path().join("calibration.csv")).unwrap();
        assert_eq!(cal.lines().next().unwrap(), "lo,hi,correct,incorrect");
        assert_eq!(cal.lines().count(), 21);
        let back: MetricReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
