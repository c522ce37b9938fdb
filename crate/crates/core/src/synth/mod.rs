//! Synthetic certificate worlds and a deterministic rule-based coder.
//!
//! A world is a vocabulary of codes with roles, a weighted causal DAG
//! (underlying -> intermediate -> terminal), priors over underlying causes
//! with demographic effects, modification rules and noise rates. Sampling
//! walks a causal path, writes it terminal-first across Part I and adds
//! Part II comorbidities. The label is the latent underlying cause after
//! the world's modification rules.

mod coder;
mod dataset;
mod sample;
mod world;

pub use coder::{rule_code, RuleOutcome, AMBIGUOUS_ORIGIN, CONFLICTING_RULES, GENERAL_PRINCIPLE, SPURIOUS_SIGNATURE};
pub use dataset::{
    generate_dataset, label_year_chi_square, write_generated, GeneratedData, SplitSpec, YEAR_EFFECT_THRESHOLD,
};
pub use sample::sample_certificate;
pub use world::{build_world, read_world, write_world, NoiseRates, WorldKnobs};

use serde::{Deserialize, Serialize};

use crate::certificate::{CertificateError, YearRange};
use crate::icd10::{Code, Icd10Error, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("world knobs: {0}")]
    Knobs(String),
    #[error("world is invalid: {0}")]
    InvalidWorld(String),
    #[error("code {0} is not in the world vocabulary")]
    OutOfVocabulary(Code),
    #[error("record {index}: no valid certificate after {attempts} draws")]
    Degenerate { index: u64, attempts: usize },
    #[error("split: {0}")]
    Split(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    Icd10(#[from] Icd10Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Can start a causal chain.
    Underlying,
    Intermediate,
    /// Ends a chain (line 1).
    Terminal,
    /// Appears only as a contributing condition.
    Comorbidity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub code: Code,
    pub role: Role,
    /// Base weight as an underlying cause or comorbidity; 0 otherwise.
    pub prior: f64,
    /// Outgoing causal edges `(target, weight)`.
    pub edges: Vec<(Code, f64)>,
}

/// Rewrites a tentative underlying cause when its trigger matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModificationRule {
    pub id: String,
    pub tentative: Code,
    /// Some code of this list must appear in Part I (empty: no condition).
    #[serde(default)]
    pub part_one_any: Vec<Code>,
    /// Some code of this list must appear in Part II (empty: no condition).
    #[serde(default)]
    pub part_two_any: Vec<Code>,
    /// Inclusive range of years of death.
    #[serde(default)]
    pub years: Option<(u16, u16)>,
    pub replacement: Code,
}

/// Multiplies the prior of every underlying cause in `chapter` by
/// `multiplier` when the demographics match, and by `otherwise` when not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicEffect {
    pub chapter: u8,
    #[serde(default)]
    pub gender: Option<u8>,
    #[serde(default)]
    pub age_classes: Option<(u8, u8)>,
    #[serde(default)]
    pub years: Option<(u16, u16)>,
    pub multiplier: f64,
    pub otherwise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub knobs: WorldKnobs,
    /// Sorted by code.
    pub nodes: Vec<Node>,
    /// Applied to labels and by the rule coder, first match wins.
    pub rules: Vec<ModificationRule>,
    /// Applied by the rule coder only, after `rules`. Models defects of a
    /// coding system in given years; labels never see them.
    #[serde(default)]
    pub coder_anomalies: Vec<ModificationRule>,
    pub effects: Vec<DemographicEffect>,
}

impl World {
    pub fn years(&self) -> YearRange {
        self.knobs.years
    }

    pub fn node(&self, code: &Code) -> Option<&Node> {
        self.nodes
            .binary_search_by(|n| n.code.cmp(code))
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::build(self.nodes.iter().map(|n| n.code)).expect("worlds are never empty")
    }

    pub fn has_edge(&self, from: &Code, to: &Code) -> bool {
        self.node(from).is_some_and(|n| n.edges.iter().any(|(t, _)| t == to))
    }

    pub fn codes_with_role(&self, role: Role) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.role == role)
    }

    /// Adds a rule-coder-only rewrite of `from` to `to` for deaths in `year`.
    pub fn with_coder_anomaly(mut self, from: Code, to: Code, year: u16) -> Self {
        self.coder_anomalies.push(ModificationRule {
            id: format!("anomaly-{year}-{from}-{to}"),
            tentative: from,
            part_one_any: Vec::new(),
            part_two_any: Vec::new(),
            years: Some((year, year)),
            replacement: to,
        });
        self
    }

    /// Checks acyclicity, terminal reachability and rule references.
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidWorld(m));
        if self.nodes.is_empty() {
            return bad("no codes".into());
        }
        if self.nodes.windows(2).any(|w| w[0].code >= w[1].code) {
            return bad("nodes are not sorted and unique".into());
        }
        for n in &self.nodes {
            for (t, w) in &n.edges {
                if self.node(t).is_none() {
                    return bad(format!("edge {} -> {t} leaves the vocabulary", n.code));
                }
                if !(*w > 0.0) {
                    return bad(format!("edge {} -> {t} has weight {w}", n.code));
                }
            }
            let role_of = |c: &Code| self.node(c).map(|x| x.role);
            match n.role {
                // paths are capped at four lines, so intermediates must be
                // able to stop at a terminal right away
                Role::Intermediate if !n.edges.iter().any(|(t, _)| role_of(t) == Some(Role::Terminal)) => {
                    return bad(format!("intermediate {} has no edge to a terminal", n.code));
                }
                Role::Underlying
                    if !n
                        .edges
                        .iter()
                        .any(|(t, _)| matches!(role_of(t), Some(Role::Terminal | Role::Intermediate))) =>
                {
                    return bad(format!("underlying {} reaches no terminal", n.code));
                }
                Role::Terminal | Role::Comorbidity if !n.edges.is_empty() => {
                    return bad(format!("{} has outgoing edges", n.code));
                }
                _ => {}
            }
        }
        // Kahn's algorithm
        let index = |c: &Code| self.nodes.binary_search_by(|n| n.code.cmp(c)).expect("checked above");
        let mut indegree = vec![0usize; self.nodes.len()];
        for n in &self.nodes {
            for (t, _) in &n.edges {
                indegree[index(t)] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..self.nodes.len()).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(i) = queue.pop() {
            seen += 1;
            for (t, _) in &self.nodes[i].edges {
                let j = index(t);
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    queue.push(j);
                }
            }
        }
        if seen != self.nodes.len() {
            return bad("the causal graph has a cycle".into());
        }
        for r in self.rules.iter().chain(&self.coder_anomalies) {
            let codes = r.part_one_any.iter().chain(&r.part_two_any).chain([&r.tentative, &r.replacement]);
            for c in codes {
                if self.node(c).is_none() {
                    return bad(format!("rule {} references {c}, which is not in the vocabulary", r.id));
                }
            }
        }
        Ok(())
    }
}
