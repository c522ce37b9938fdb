use super::{ModificationRule, SynthError, World};
use crate::certificate::{Certificate, RuleOutput};
use crate::icd10::Code;

pub const GENERAL_PRINCIPLE: &str = "general-principle";
pub const AMBIGUOUS_ORIGIN: &str = "ambiguous-origin";
pub const SPURIOUS_SIGNATURE: &str = "spurious-signature";
pub const CONFLICTING_RULES: &str = "conflicting-rules";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleOutcome {
    pub output: RuleOutput,
    /// Identifiers of everything that fired, in order.
    pub trace: Vec<String>,
}

impl RuleOutcome {
    fn reject(trace: Vec<String>) -> Self {
        RuleOutcome {
            output: RuleOutput::Reject,
            trace,
        }
    }
}

pub(crate) fn rule_matches(r: &ModificationRule, code: Code, part_one: &[Code], part_two: &[Code], year: u16) -> bool {
    r.tentative == code
        && (r.part_one_any.is_empty() || r.part_one_any.iter().any(|c| part_one.contains(c)))
        && (r.part_two_any.is_empty() || r.part_two_any.iter().any(|c| part_two.contains(c)))
        && r.years.is_none_or(|(a, b)| (a..=b).contains(&year))
}

/// Codes a certificate the way a rule-based system would.
///
/// The tentative cause is the first code of the lowest non-empty Part I
/// line. The certificate is rejected when that line holds several codes,
/// when some Part I code has no causal edge to the line above it, or when
/// modification rules with different replacements all match.
pub fn rule_code(cert: &Certificate, world: &World) -> Result<RuleOutcome, SynthError> {
    if let Some(c) = cert.chain.codes().find(|c| world.node(c).is_none()) {
        return Err(SynthError::OutOfVocabulary(*c));
    }
    let lines: Vec<&Vec<Code>> = cert.chain.part_one().iter().filter(|l| !l.is_empty()).collect();
    let lowest = lines.last().expect("a causal chain always has a Part I code");
    if lowest.len() > 1 {
        return Ok(RuleOutcome::reject(vec![AMBIGUOUS_ORIGIN.into()]));
    }
    for pair in lines.windows(2) {
        let (above, below) = (pair[0], pair[1]);
        if below.iter().any(|c| !above.iter().any(|d| world.has_edge(c, d))) {
            return Ok(RuleOutcome::reject(vec![SPURIOUS_SIGNATURE.into()]));
        }
    }

    let part_one: Vec<Code> = cert.chain.part_one().iter().flatten().copied().collect();
    let part_two: Vec<Code> = cert.chain.part_two().iter().flatten().copied().collect();
    let year = cert.demo.year;
    let mut trace = vec![GENERAL_PRINCIPLE.to_string()];
    let mut ucd = lowest[0];

    let fired: Vec<&ModificationRule> = world
        .rules
        .iter()
        .filter(|r| rule_matches(r, ucd, &part_one, &part_two, year))
        .collect();
    if fired.iter().any(|r| r.replacement != fired[0].replacement) {
        trace.extend(fired.iter().map(|r| r.id.clone()));
        trace.push(CONFLICTING_RULES.into());
        return Ok(RuleOutcome::reject(trace));
    }
    if let Some(r) = fired.first() {
        ucd = r.replacement;
        trace.push(r.id.clone());
    }
    if let Some(a) = world
        .coder_anomalies
        .iter()
        .find(|a| rule_matches(a, ucd, &part_one, &part_two, year))
    {
        ucd = a.replacement;
        trace.push(a.id.clone());
    }
    Ok(RuleOutcome {
        output: RuleOutput::Code(ucd),
        trace,
    })
}
