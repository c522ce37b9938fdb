use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::coder::{rule_code, rule_matches};
use super::{Role, SynthError, World};
use crate::certificate::{CausalChain, Certificate, Demographics, AGE_CLASSES, PART_ONE_LINES};
use crate::icd10::{chapter_of, Code};

/// Relative frequency of each age class among deaths.
const AGE_WEIGHTS: [f64; AGE_CLASSES] = [
    2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 16.0,
    12.0, 8.0, 4.0, 1.0, 0.5,
];

/// Part II codes per line.
const PART_TWO_LINE: usize = 3;

const MAX_ATTEMPTS: usize = 16;

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [(Code, f64)]) -> Option<&'a Code> {
    let dist = WeightedIndex::new(items.iter().map(|(_, w)| *w)).ok()?;
    Some(&items[dist.sample(rng)].0)
}

fn effect_multiplier(world: &World, code: &Code, demo: &Demographics) -> f64 {
    let chapter = chapter_of(code).map(|c| c.index).unwrap_or(0);
    let mut m = 1.0;
    for e in world.effects.iter().filter(|e| e.chapter == chapter) {
        let hit = e.gender.is_none_or(|g| g == demo.gender)
            && e.age_classes.is_none_or(|(a, b)| (a..=b).contains(&demo.age_class))
            && e.years.is_none_or(|(a, b)| (a..=b).contains(&demo.year));
        m *= if hit { e.multiplier } else { e.otherwise };
    }
    m
}

/// Draws certificate `index` of the stream keyed by `seed`. The result
/// depends only on `(world, seed, index)`.
pub fn sample_certificate(world: &World, seed: u64, index: u64) -> Result<Certificate, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let years = world.years();
    let ages = WeightedIndex::new(AGE_WEIGHTS).expect("positive weights");

    for _ in 0..MAX_ATTEMPTS {
        let year = years.base + rng.random_range(0..years.states as u16);
        let demo = Demographics::new(rng.random_range(1..=2), ages.sample(&mut rng) as u8, year)?;
        let priors: Vec<(Code, f64)> = world
            .codes_with_role(Role::Underlying)
            .map(|n| (n.code, n.prior * effect_multiplier(world, &n.code, &demo)))
            .collect();
        let Some(&ucd) = pick(&mut rng, &priors) else {
            continue;
        };
        if let Some(cert) = write_certificate(world, &mut rng, ucd, demo, index)? {
            return Ok(cert);
        }
    }
    Err(SynthError::Degenerate {
        index,
        attempts: MAX_ATTEMPTS,
    })
}

fn write_certificate(
    world: &World,
    rng: &mut ChaCha8Rng,
    ucd: Code,
    demo: Demographics,
    index: u64,
) -> Result<Option<Certificate>, SynthError> {
    let role = |c: &Code| world.node(c).map(|n| n.role);

    // causal walk, at most PART_ONE_LINES nodes long
    let mut path = vec![ucd];
    while role(path.last().expect("non-empty")) != Some(Role::Terminal) {
        let node = world.node(path.last().expect("non-empty")).expect("validated world");
        let last_slot = path.len() + 1 == PART_ONE_LINES;
        let options: Vec<(Code, f64)> = node
            .edges
            .iter()
            .filter(|(t, _)| !last_slot || role(t) == Some(Role::Terminal))
            .copied()
            .collect();
        match pick(rng, &options) {
            Some(&next) => path.push(next),
            None => return Ok(None),
        }
    }

    let mut part_one: Vec<Vec<Code>> = path.iter().rev().map(|c| vec![*c]).collect();
    let mut part_two: Vec<Code> = Vec::new();
    let present = |p1: &[Vec<Code>], p2: &[Code], c: &Code| p1.iter().flatten().any(|x| x == c) || p2.contains(c);
    let comorbidities: Vec<(Code, f64)> = world
        .nodes
        .iter()
        .filter(|n| matches!(n.role, Role::Comorbidity | Role::Underlying))
        .map(|n| (n.code, n.prior))
        .collect();

    let relocatable = world
        .rules
        .iter()
        .any(|r| r.tentative == path[1] && r.replacement == ucd && r.part_two_any.contains(&ucd));
    if relocatable && rng.random_bool(world.knobs.relocation_rate) {
        part_one.pop();
        part_two.push(ucd);
    } else if rng.random_bool(world.knobs.co_report_rate) {
        let options: Vec<(Code, f64)> = comorbidities.iter().filter(|(c, _)| !present(&part_one, &part_two, c)).copied().collect();
        if let Some(&c) = pick(rng, &options) {
            part_one.last_mut().expect("non-empty").push(c);
        }
    }
    if rng.random_bool(world.knobs.part_two_rate) {
        let count = if rng.random_bool(0.3) { 2 } else { 1 };
        for _ in 0..count {
            let options: Vec<(Code, f64)> =
                comorbidities.iter().filter(|(c, _)| !present(&part_one, &part_two, c)).copied().collect();
            if let Some(&c) = pick(rng, &options) {
                part_two.push(c);
            }
        }
    }

    // the label comes from the certificate as the certifier meant it
    let label = {
        let tentative = part_one.last().expect("non-empty")[0];
        let p1: Vec<Code> = part_one.iter().flatten().copied().collect();
        world
            .rules
            .iter()
            .find(|r| rule_matches(r, tentative, &p1, &part_two, demo.year))
            .map_or(tentative, |r| r.replacement)
    };

    let noise = world.knobs.noise;
    if part_one.len() >= 2 && rng.random_bool(noise.line_omission) {
        let j = rng.random_range(1..part_one.len());
        let dropped = part_one.remove(j);
        if j == part_one.len() {
            part_two.splice(0..0, dropped);
        }
    }
    if rng.random_bool(noise.spurious_code) {
        let options: Vec<Code> = world
            .nodes
            .iter()
            .map(|n| n.code)
            .filter(|c| !present(&part_one, &part_two, c))
            .collect();
        let x = options[rng.random_range(0..options.len())];
        if part_one.len() < PART_ONE_LINES && rng.random_bool(0.5) {
            part_one.push(vec![x]);
        } else {
            let l = rng.random_range(0..part_one.len());
            part_one[l].push(x);
        }
    }
    if rng.random_bool(noise.rank_shuffle) {
        for line in part_one.iter_mut().filter(|l| l.len() > 1) {
            line.shuffle(rng);
        }
        part_two.shuffle(rng);
    }

    let part_two_lines: Vec<Vec<Code>> = part_two.chunks(PART_TWO_LINE).map(<[Code]>::to_vec).collect();
    let chain = CausalChain::from_parts(&part_one, &part_two_lines)?;
    let mut cert = Certificate {
        id: format!("c{index:07}"),
        chain,
        demo,
        label: Some(label),
        rule_output: None,
    };
    cert.rule_output = Some(rule_code(&cert, world)?.output);
    Ok(Some(cert))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::{RuleOutput, LINES};
    use crate::synth::{build_world, WorldKnobs, AMBIGUOUS_ORIGIN, CONFLICTING_RULES};

    #[test]
    fn reproducible_by_index() {
        let w = build_world(2, WorldKnobs::default()).unwrap();
        let a = sample_certificate(&w, 9, 1234).unwrap();
        let b = sample_certificate(&w, 9, 1234).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_certificate(&w, 9, 1235).unwrap());
        assert_eq!(a.id, "c0001234");
    }

    #[test]
    fn shape_invariants() {
        let w = build_world(2, WorldKnobs::default()).unwrap();
        for i in 0..2000 {
            let c = sample_certificate(&w, 1, i).unwrap();
            assert!(c.chain.part_one().iter().any(|l| !l.is_empty()));
            assert!(c.chain.max_line_len() <= 5);
            assert_eq!(c.chain.lines().len(), LINES);
            let label = c.label.unwrap();
            assert_eq!(w.node(&label).unwrap().role, Role::Underlying);
        }
    }

    #[test]
    fn noiseless_world_codes_its_own_labels() {
        let w = build_world(4, WorldKnobs::noiseless()).unwrap();
        let mut rejects = 0;
        for i in 0..10_000 {
            let c = sample_certificate(&w, 4, i).unwrap();
            let out = rule_code(&c, &w).unwrap();
            match out.output {
                RuleOutput::Code(code) => assert_eq!(Some(code), c.label, "record {i}: {:?}", out.trace),
                RuleOutput::Reject => {
                    rejects += 1;
                    let t = out.trace.last().unwrap();
                    assert!(t == AMBIGUOUS_ORIGIN || t == CONFLICTING_RULES, "record {i}: {t}");
                }
            }
        }
        assert!(rejects > 0 && rejects < 1500, "{rejects}");
    }
}
