use super::{ForwardOutput, ModelError};
use crate::icd10::{Code, Vocabulary};

/// Column indices of the `k` largest entries, by decreasing value; equal
/// values are ordered by ascending index.
pub fn topk_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// The `k` most probable codes of every row with their probabilities.
pub fn predict_topk(out: &ForwardOutput, vocab: &Vocabulary, k: usize) -> Result<Vec<Vec<(Code, f64)>>, ModelError> {
    let v = out.classes();
    if k == 0 || k > v {
        return Err(ModelError::Input(format!("k = {k} outside 1..={v}")));
    }
    if vocab.len() != v {
        return Err(ModelError::Input(format!(
            "vocabulary has {} codes but the output has {v} columns",
            vocab.len()
        )));
    }
    (0..out.rows())
        .map(|i| {
            let row = out.probability_row(i);
            topk_indices(row, k)
                .into_iter()
                .map(|j| Ok((vocab.code_at(j as u32 + 1)?, row[j])))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::icd10::code;

    fn output(rows: &[&[f64]]) -> ForwardOutput {
        let v = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let t = Tensor::new(&[rows.len(), v], data).unwrap();
        ForwardOutput {
            logits: t.clone(),
            probabilities: t,
        }
    }

    #[test]
    fn tie_rule_and_nesting() {
        let vocab = Vocabulary::build(["A00", "B20", "C46", "D50"].map(code)).unwrap();
        let out = output(&[&[0.25; 4], &[0.1, 0.5, 0.1, 0.3]]);
        let top = predict_topk(&out, &vocab, 2).unwrap();
        assert_eq!(top[0], vec![(code("A00"), 0.25), (code("B20"), 0.25)]);
        assert_eq!(top[1][0].0, code("B20"));
        assert_eq!(top[1][1].0, code("D50"));
        let top1 = predict_topk(&out, &vocab, 1).unwrap();
        for (a, b) in top1.iter().zip(&top) {
            assert!(b.contains(&a[0]));
        }
        assert!(predict_topk(&out, &vocab, 0).is_err());
        assert!(predict_topk(&out, &vocab, 5).is_err());
    }

    #[test]
    fn argmax() {
        assert_eq!(topk_indices(&[0.1, 0.7, 0.2], 1), vec![1]);
        assert_eq!(topk_indices(&[0.3, 0.3, 0.4], 3), vec![2, 0, 1]);
    }
}
