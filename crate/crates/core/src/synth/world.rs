use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DemographicEffect, ModificationRule, Node, Role, SynthError, World};
use crate::certificate::YearRange;
use crate::icd10::{code, Code, ChapterTable, CHAPTER_COUNT};

/// Label-preserving noise applied to sampled certificates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRates {
    /// Drop one Part I line below line 1. An intermediate line disappears;
    /// the underlying-cause line is reported in Part II instead.
    pub line_omission: f64,
    /// Shuffle the codes within every multi-code line and within Part II.
    pub rank_shuffle: f64,
    /// Insert a random code, either on a Part I line or as a new lowest line.
    pub spurious_code: f64,
}

impl NoiseRates {
    pub fn zero() -> Self {
        NoiseRates {
            line_omission: 0.0,
            rank_shuffle: 0.0,
            spurious_code: 0.0,
        }
    }
}

impl Default for NoiseRates {
    fn default() -> Self {
        NoiseRates {
            line_omission: 0.12,
            rank_shuffle: 0.10,
            spurious_code: 0.12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldKnobs {
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    pub years: YearRange,
    /// First year of the hypertension coding drift.
    pub drift_year: u16,
    /// Probability of one or more Part II comorbidities.
    pub part_two_rate: f64,
    /// Probability that a second condition shares the underlying-cause line.
    pub co_report_rate: f64,
    /// Probability that a rule-resolved underlying cause (the HIV analog) is
    /// written in Part II rather than at the bottom of Part I.
    pub relocation_rate: f64,
    pub noise: NoiseRates,
}

impl Default for WorldKnobs {
    fn default() -> Self {
        WorldKnobs {
            vocab_size: 200,
            zipf_exponent: 1.0,
            years: YearRange::default(),
            drift_year: 2009,
            part_two_rate: 0.5,
            co_report_rate: 0.06,
            relocation_rate: 0.5,
            noise: NoiseRates::default(),
        }
    }
}

impl WorldKnobs {
    pub fn noiseless() -> Self {
        WorldKnobs {
            noise: NoiseRates::zero(),
            ..WorldKnobs::default()
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let rate = |name: &str, r: f64| {
            if (0.0..1.0).contains(&r) {
                Ok(())
            } else {
                Err(SynthError::Knobs(format!("{name} = {r} is outside [0, 1)")))
            }
        };
        rate("line_omission", self.noise.line_omission)?;
        rate("rank_shuffle", self.noise.rank_shuffle)?;
        rate("spurious_code", self.noise.spurious_code)?;
        rate("part_two_rate", self.part_two_rate)?;
        rate("co_report_rate", self.co_report_rate)?;
        rate("relocation_rate", self.relocation_rate)?;
        if self.vocab_size < MIN_VOCAB {
            return Err(SynthError::Knobs(format!(
                "vocab_size {} is below the minimum of {MIN_VOCAB}",
                self.vocab_size
            )));
        }
        if !(self.zipf_exponent >= 0.0) || self.years.states == 0 {
            return Err(SynthError::Knobs("zipf_exponent must be >= 0 and years non-empty".into()));
        }
        if self.drift_year <= self.years.base || self.drift_year > self.years.last() {
            return Err(SynthError::Knobs(format!(
                "drift_year {} must fall strictly inside the year range {}..={}",
                self.drift_year,
                self.years.base,
                self.years.last()
            )));
        }
        Ok(())
    }
}

const MIN_VOCAB: usize = 60;

/// Relative share of the vocabulary per chapter (I..XXII).
const CHAPTER_WEIGHTS: [f64; CHAPTER_COUNT] = [
    12.0, 25.0, 5.0, 10.0, 8.0, 8.0, 2.0, 2.0, 25.0, 15.0, 12.0, 3.0, 5.0, 8.0, 4.0, 4.0, 4.0, 10.0, 12.0,
    14.0, 3.0, 2.0,
];

/// Role mix per chapter: (underlying, intermediate, terminal, comorbidity).
const ROLE_MIX: [(f64, f64, f64, f64); CHAPTER_COUNT] = [
    (0.8, 0.2, 0.0, 0.0),
    (0.9, 0.1, 0.0, 0.0),
    (0.4, 0.6, 0.0, 0.0),
    (0.6, 0.2, 0.0, 0.2),
    (0.7, 0.0, 0.0, 0.3),
    (0.5, 0.5, 0.0, 0.0),
    (0.0, 0.0, 0.0, 1.0),
    (0.5, 0.0, 0.0, 0.5),
    (0.4, 0.4, 0.2, 0.0),
    (0.4, 0.3, 0.3, 0.0),
    (0.5, 0.5, 0.0, 0.0),
    (0.5, 0.0, 0.0, 0.5),
    (0.5, 0.0, 0.0, 0.5),
    (0.4, 0.5, 0.1, 0.0),
    (1.0, 0.0, 0.0, 0.0),
    (1.0, 0.0, 0.0, 0.0),
    (1.0, 0.0, 0.0, 0.0),
    (0.0, 0.0, 1.0, 0.0),
    (0.0, 1.0, 0.0, 0.0),
    (1.0, 0.0, 0.0, 0.0),
    (0.0, 0.0, 0.0, 1.0),
    (1.0, 0.0, 0.0, 0.0),
];

/// Codes every world contains, with their role and prior rank among
/// underlying causes.
const ANCHORS: [(&str, Role, Option<usize>); 10] = [
    ("I10", Role::Underlying, Some(0)),
    ("X42", Role::Underlying, Some(3)),
    ("F110", Role::Underlying, Some(6)),
    ("B20", Role::Underlying, Some(8)),
    ("X44", Role::Underlying, Some(10)),
    ("I11", Role::Underlying, Some(14)),
    ("F119", Role::Underlying, Some(16)),
    ("D84", Role::Underlying, Some(20)),
    ("C46", Role::Intermediate, None),
    ("I50", Role::Intermediate, None),
];

/// Forced anchor edges `(from, to, weight)`.
const ANCHOR_EDGES: [(&str, &str, f64); 4] = [("B20", "C46", 4.0), ("D84", "C46", 3.0), ("I10", "I50", 5.0), ("I11", "I50", 5.0)];

/// Three-symbol categories of `chapter`.
fn categories(table: &ChapterTable, chapter: u8) -> Vec<Code> {
    let ch = table.get(chapter).expect("chapter index in range");
    let mut out = Vec::new();
    for r in &ch.ranges {
        for letter in r.start.letter()..=r.end.letter() {
            for n in 0..100 {
                let c = code(&format!("{letter}{n:02}"));
                if r.contains(&c) {
                    out.push(c);
                }
            }
        }
    }
    out
}

fn chapter_counts(total: usize) -> Vec<usize> {
    let sum: f64 = CHAPTER_WEIGHTS.iter().sum();
    let free = total - CHAPTER_COUNT;
    let mut counts: Vec<usize> = CHAPTER_WEIGHTS.iter().map(|w| 1 + (w / sum * free as f64) as usize).collect();
    let mut i = 0;
    while counts.iter().sum::<usize>() < total {
        // hand the rounding remainder to the heaviest chapters first
        let mut order: Vec<usize> = (0..CHAPTER_COUNT).collect();
        order.sort_by(|&a, &b| CHAPTER_WEIGHTS[b].total_cmp(&CHAPTER_WEIGHTS[a]));
        counts[order[i % CHAPTER_COUNT]] += 1;
        i += 1;
    }
    counts
}

fn draw_role(rng: &mut ChaCha8Rng, chapter: u8) -> Role {
    let (u, m, t, _) = ROLE_MIX[chapter as usize - 1];
    let x: f64 = rng.random();
    if x < u {
        Role::Underlying
    } else if x < u + m {
        Role::Intermediate
    } else if x < u + m + t {
        Role::Terminal
    } else {
        Role::Comorbidity
    }
}

fn zipf(rank: usize, s: f64) -> f64 {
    1.0 / ((rank + 1) as f64).powf(s)
}

pub fn build_world(seed: u64, knobs: WorldKnobs) -> Result<World, SynthError> {
    knobs.validate()?;
    let table = ChapterTable::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen: BTreeSet<Code> = BTreeSet::new();
    let mut roles: Vec<(Code, Role)> = Vec::new();
    for (text, role, _) in ANCHORS {
        chosen.insert(code(text));
        roles.push((code(text), role));
    }
    let counts = chapter_counts(knobs.vocab_size - ANCHORS.len());
    for (i, &n) in counts.iter().enumerate() {
        let chapter = i as u8 + 1;
        let mut cats = categories(table, chapter);
        cats.shuffle(&mut rng);
        let mut added = 0;
        for cat in cats {
            if added == n {
                break;
            }
            let c = if rng.random_bool(0.25) {
                code(&format!("{cat}{}", rng.random_range(0..10)))
            } else {
                cat
            };
            if chosen.insert(c) {
                roles.push((c, draw_role(&mut rng, chapter)));
                added += 1;
            }
        }
    }

    let of_role = |r: Role| -> Vec<Code> { roles.iter().filter(|(_, x)| *x == r).map(|(c, _)| *c).collect() };
    let underlying = of_role(Role::Underlying);
    let mut intermediate = of_role(Role::Intermediate);
    let terminal = of_role(Role::Terminal);
    let comorbid = of_role(Role::Comorbidity);
    if terminal.len() < 3 || intermediate.len() < 5 || underlying.len() < 10 {
        return Err(SynthError::Knobs(format!(
            "vocab_size {} leaves too few codes per role ({} underlying, {} intermediate, {} terminal)",
            knobs.vocab_size,
            underlying.len(),
            intermediate.len(),
            terminal.len()
        )));
    }

    // priors: Zipf over a random ranking, anchors at fixed ranks
    let mut ranked: Vec<Code> = underlying
        .iter()
        .filter(|c| !ANCHORS.iter().any(|(a, _, _)| code(a) == **c))
        .copied()
        .collect();
    ranked.shuffle(&mut rng);
    let mut anchored: Vec<(usize, Code)> = ANCHORS
        .iter()
        .filter_map(|(a, _, rank)| rank.map(|r| (r, code(a))))
        .collect();
    anchored.sort();
    for (r, c) in anchored {
        ranked.insert(r.min(ranked.len()), c);
    }
    let mut comorbid_ranked = comorbid.clone();
    comorbid_ranked.shuffle(&mut rng);

    // edges; intermediates may only point to intermediates later in this order
    intermediate.shuffle(&mut rng);
    let mut edges: Vec<(Code, Vec<(Code, f64)>)> = Vec::new();
    let chapter_of = |c: &Code| table.chapter_of(c).map(|ch| ch.index).unwrap_or(0);
    // anchor intermediates are reached through their anchor edges only
    let is_anchor = |c: &Code| ANCHORS.iter().any(|(a, _, _)| code(a) == *c);
    let free_mid: Vec<Code> = intermediate.iter().filter(|c| !is_anchor(c)).copied().collect();
    let injuries: Vec<Code> = free_mid.iter().filter(|c| chapter_of(c) == 19).copied().collect();
    for c in &ranked {
        let mut out: Vec<(Code, f64)> = Vec::new();
        let pool = if chapter_of(c) == 20 && !injuries.is_empty() { &injuries } else { &free_mid };
        let k = rng.random_range(1..=3usize).min(pool.len());
        for t in pool.choose_multiple(&mut rng, k) {
            out.push((*t, rng.random_range(0.5..2.0)));
        }
        if rng.random_bool(0.4) {
            let t = *terminal.choose(&mut rng).expect("checked non-empty");
            out.push((t, rng.random_range(0.5..2.0)));
        }
        edges.push((*c, out));
    }
    for (i, c) in intermediate.iter().enumerate() {
        let mut out: Vec<(Code, f64)> = Vec::new();
        let k = rng.random_range(1..=2usize).min(terminal.len());
        for t in terminal.choose_multiple(&mut rng, k) {
            out.push((*t, rng.random_range(0.5..2.0)));
        }
        if i + 1 < intermediate.len() && rng.random_bool(0.3) {
            let t = intermediate[rng.random_range(i + 1..intermediate.len())];
            if !is_anchor(&t) {
                out.push((t, rng.random_range(0.2..1.0)));
            }
        }
        edges.push((*c, out));
    }
    for (from, to, w) in ANCHOR_EDGES {
        let (from, to) = (code(from), code(to));
        let entry = &mut edges.iter_mut().find(|(c, _)| *c == from).expect("anchor present").1;
        entry.retain(|(t, _)| *t != to);
        entry.push((to, w));
    }
    let mut nodes: Vec<Node> = roles
        .iter()
        .map(|&(c, role)| {
            let prior = match role {
                Role::Underlying => zipf(ranked.iter().position(|x| *x == c).expect("ranked"), knobs.zipf_exponent),
                Role::Comorbidity => zipf(
                    comorbid_ranked.iter().position(|x| *x == c).expect("ranked"),
                    knobs.zipf_exponent,
                ),
                _ => 0.0,
            };
            let mut out = edges.iter().find(|(x, _)| *x == c).map(|(_, e)| e.clone()).unwrap_or_default();
            out.sort_by(|a, b| a.0.cmp(&b.0));
            Node {
                code: c,
                role,
                prior,
                edges: out,
            }
        })
        .collect();
    nodes.sort_by(|a, b| a.code.cmp(&b.code));

    let rules = vec![
        ModificationRule {
            id: "kaposi-hiv".into(),
            tentative: code("C46"),
            part_one_any: Vec::new(),
            part_two_any: vec![code("B20")],
            years: None,
            replacement: code("B20"),
        },
        ModificationRule {
            id: "kaposi-immunodeficiency".into(),
            tentative: code("C46"),
            part_one_any: Vec::new(),
            part_two_any: vec![code("D84")],
            years: None,
            replacement: code("D84"),
        },
        ModificationRule {
            id: "hypertension-drift".into(),
            tentative: code("I10"),
            part_one_any: vec![code("I50")],
            part_two_any: Vec::new(),
            years: Some((knobs.drift_year, knobs.years.last())),
            replacement: code("I11"),
        },
    ];

    let last = knobs.years.last();
    let effects = vec![
        // pregnancy: women aged 15-49 only
        DemographicEffect {
            chapter: 15,
            gender: Some(2),
            age_classes: Some((5, 11)),
            years: None,
            multiplier: 1.0,
            otherwise: 0.0,
        },
        // perinatal conditions: first year of life only, where they dominate
        DemographicEffect {
            chapter: 16,
            gender: None,
            age_classes: Some((0, 1)),
            years: None,
            multiplier: 40.0,
            otherwise: 0.0,
        },
        DemographicEffect {
            chapter: 17,
            gender: None,
            age_classes: Some((0, 2)),
            years: None,
            multiplier: 8.0,
            otherwise: 1.0,
        },
        DemographicEffect {
            chapter: 20,
            gender: None,
            age_classes: Some((3, 10)),
            years: None,
            multiplier: 5.0,
            otherwise: 1.0,
        },
        DemographicEffect {
            chapter: 2,
            gender: None,
            age_classes: Some((12, 24)),
            years: None,
            multiplier: 2.0,
            otherwise: 0.5,
        },
        // special-purpose codes enter use late in the period
        DemographicEffect {
            chapter: 22,
            gender: None,
            age_classes: None,
            years: Some((knobs.years.base + (knobs.years.states as u16 * 2) / 3, last)),
            multiplier: 1.0,
            otherwise: 0.0,
        },
    ];

    let world = World {
        seed,
        knobs,
        nodes,
        rules,
        coder_anomalies: Vec::new(),
        effects,
    };
    world.validate()?;
    Ok(world)
}

pub fn write_world(world: &World, path: &Path) -> Result<(), SynthError> {
    let mut text = serde_json::to_string_pretty(world).expect("worlds serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| SynthError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_world(path: &Path) -> Result<World, SynthError> {
    let io = |message: String| SynthError::Io {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    let world: World = serde_json::from_str(&text).map_err(|e| io(e.to_string()))?;
    world.validate()?;
    Ok(world)
}
