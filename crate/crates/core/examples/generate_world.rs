//! Builds a synthetic world, samples a dataset and reports the rule coder on it.
//!
//!     cargo run --release --example generate_world -- [records] [out-dir]

use std::path::PathBuf;

use ucdnet::synth::{build_world, generate_dataset, rule_code, write_generated, SplitSpec, WorldKnobs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let records: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(5000);
    let out = args.next().map(PathBuf::from);

    let world = build_world(1, WorldKnobs::default())?;
    println!("world: {} codes", world.vocabulary().len());

    let split = SplitSpec {
        validation_per_year: 20,
        test_per_year: 50,
    };
    let data = generate_dataset(&world, records, split, 2)?;
    println!("{} train, {} validation, {} test", data.train.len(), data.validation.len(), data.test.len());

    let cert = &data.test[0];
    println!("\nfirst test certificate ({}):", cert.id);
    for (i, line) in cert.chain.part_one().iter().enumerate() {
        let codes: Vec<String> = line.iter().map(|c| c.to_string()).collect();
        println!("  line {}: {}", i + 1, codes.join(" "));
    }
    let outcome = rule_code(cert, &world)?;
    let label = cert.label.map(|c| c.to_string()).unwrap_or_default();
    let rule = outcome.output.code().map(|c| c.to_string()).unwrap_or("reject".into());
    println!("  label {label}, rule coder {rule}");
    println!("  rules fired: {}", outcome.trace.join(", "));

    for (name, b) in &data.summary.baselines {
        println!(
            "rule coder [{name}]: overall {:.4}, non-rejected {:.4}, reject rate {:.4}",
            b.overall,
            b.non_rejected.unwrap_or(f64::NAN),
            b.reject_rate
        );
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        write_generated(&data, &world, &dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
