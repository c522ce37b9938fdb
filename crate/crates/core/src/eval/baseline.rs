use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::certificate::{Certificate, RuleOutput};

/// Rule-coder accuracy with rejects scored as errors (`overall`) and
/// restricted to the records it did not reject (`non_rejected`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineAccuracy {
    pub records: usize,
    pub rejects: usize,
    pub correct: usize,
    pub overall: f64,
    /// `None` when everything was rejected.
    pub non_rejected: Option<f64>,
    pub reject_rate: f64,
}

pub fn rule_baseline(certs: &[Certificate]) -> Result<BaselineAccuracy, EvalError> {
    if certs.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut rejects, mut correct) = (0, 0);
    for c in certs {
        let (Some(label), Some(out)) = (c.label, c.rule_output) else {
            return Err(EvalError::Unscored(c.id.clone()));
        };
        match out {
            RuleOutput::Reject => rejects += 1,
            RuleOutput::Code(code) if code == label => correct += 1,
            RuleOutput::Code(_) => {}
        }
    }
    let n = certs.len();
    let kept = n - rejects;
    Ok(BaselineAccuracy {
        records: n,
        rejects,
        correct,
        overall: correct as f64 / n as f64,
        non_rejected: (kept > 0).then(|| correct as f64 / kept as f64),
        reject_rate: rejects as f64 / n as f64,
    })
}
