//! Recoding study on a world whose rule coder rewrites X42 as X44 in 2012.
//! Counts of a code set per year are compared with an external reference;
//! a year where the reference exceeds a series is flagged.

use ucdnet::eval::{codeset_trajectory, compare_trajectories, CodeSet, TrajectorySeries};
use ucdnet::icd10::code;
use ucdnet::synth::{build_world, sample_certificate, WorldKnobs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = build_world(1, WorldKnobs::default())?.with_coder_anomaly(code("X42"), code("X44"), 2012);
    world.validate()?;
    let certs = (0..16_000).map(|i| sample_certificate(&world, 21, i)).collect::<Result<Vec<_>, _>>()?;
    let set = CodeSet::parse("X42, F11*")?;
    let years = 2000..=2015u16;

    let labels: Vec<_> = certs.iter().map(|c| c.label.expect("sampled certificates are labeled")).collect();
    let official: Vec<_> = certs.iter().map(|c| c.official_code().expect("label")).collect();
    let truth = codeset_trajectory(certs.iter().map(|c| c.demo.year).zip(&labels), &set, years.clone());
    let rule = codeset_trajectory(certs.iter().map(|c| c.demo.year).zip(&official), &set, years);

    // a source that sees 70% of the deaths
    let reference = TrajectorySeries {
        counts: truth.counts.iter().map(|(&y, &n)| (y, n * 7 / 10)).collect(),
    };

    println!("year  truth  rule  reference");
    for (y, n) in &truth.counts {
        println!("{y}  {n:>5}  {:>4}  {:>9}", rule.counts[y], reference.counts[y]);
    }
    println!("rule coder below reference in {:?}", compare_trajectories(&rule, &reference)?);
    println!("ground truth below reference in {:?}", compare_trajectories(&truth, &reference)?);
    Ok(())
}
