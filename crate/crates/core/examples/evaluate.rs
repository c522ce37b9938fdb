//! Full metric report for a model on held-out certificates: accuracy with
//! bootstrap intervals, top-2, per-chapter rates, confusion and calibration.
//!
//!     cargo run --release --example evaluate -- [checkpoint]
//!
//! Without a checkpoint a small model is trained for 600 steps first.

use ucdnet::eval::{evaluate, Bootstrap};
use ucdnet::model::{load_checkpoint, Model, ModelConfig};
use ucdnet::synth::{build_world, generate_dataset, SplitSpec, WorldKnobs};
use ucdnet::training::{train, LabeledSet, ScheduleConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = build_world(1, WorldKnobs::default())?;
    let split = SplitSpec {
        validation_per_year: 30,
        test_per_year: 60,
    };
    let data = generate_dataset(&world, 20_000, split, 2)?;
    let vocab = world.vocabulary();

    let model = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(path.as_ref())?.0,
        None => {
            let cfg = ModelConfig::desk(vocab.len());
            let set = LabeledSet::from_certificates(&data.train, &vocab, cfg.width, None)?;
            let tc = TrainConfig {
                total_steps: 600,
                ..TrainConfig::desk()
            };
            train(Model::new(cfg, 0)?, &set, None, tc, ScheduleConfig::desk())?.0
        }
    };

    let test = LabeledSet::from_certificates(&data.test, &vocab, model.config.width, None)?;
    let out = model.predict(&test.examples, 64)?;
    let r = evaluate(&out.probabilities, &test.labels, &vocab, Some(&data.test), Bootstrap::default())?;

    println!("{} records", r.records);
    println!("accuracy {:.4} [{:.4}, {:.4}]", r.accuracy.value, r.accuracy.lo, r.accuracy.hi);
    println!("top-2    {:.4} [{:.4}, {:.4}]", r.top2_accuracy.value, r.top2_accuracy.lo, r.top2_accuracy.hi);
    if let Some(s) = r.second_choice_on_errors {
        println!("second choice right on {:.1}% of errors", 100.0 * s.value);
    }
    if let Some(b) = &r.rule_baseline {
        println!("rule coder overall {:.4}, non-rejected {:.4}", b.overall, b.non_rejected.unwrap_or(f64::NAN));
    }
    let c = &r.calibration;
    println!(
        "mean confidence: correct {:.3}, incorrect {:.3}",
        c.mean_confidence_correct.unwrap_or(f64::NAN),
        c.mean_confidence_incorrect.unwrap_or(f64::NAN)
    );
    println!("errors crossing chapters: {}", r.confusion.cross_chapter());
    println!("\nchapter  records  errors");
    for c in r.chapters.iter().filter(|c| c.records > 0) {
        println!("{:>7}  {:>7}  {:>6}", c.chapter, c.records, c.errors);
    }
    Ok(())
}
