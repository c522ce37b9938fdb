//! Trains the desk-scale network on a generated world and saves a checkpoint.
//!
//!     cargo run --release --example train_desk -- [steps] [checkpoint]

use std::time::Instant;

use ucdnet::model::{save_checkpoint, Model, ModelConfig};
use ucdnet::synth::{build_world, generate_dataset, SplitSpec, WorldKnobs};
use ucdnet::training::{accuracy, LabeledSet, ScheduleConfig, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(600);
    let ckpt = args.next().unwrap_or_else(|| "desk.ckpt".into());

    let world = build_world(1, WorldKnobs::default())?;
    let split = SplitSpec {
        validation_per_year: 30,
        test_per_year: 60,
    };
    let data = generate_dataset(&world, 20_000, split, 2)?;
    let vocab = world.vocabulary();
    let cfg = ModelConfig::desk(vocab.len());
    let train = LabeledSet::from_certificates(&data.train, &vocab, cfg.width, None)?;
    let val = LabeledSet::from_certificates(&data.validation, &vocab, cfg.width, None)?;

    let model = Model::new(cfg, 0)?;
    println!("{} parameters, {} training records", model.params.scalar_count(), train.labels.len());
    let tc = TrainConfig {
        total_steps: steps,
        ..TrainConfig::desk()
    };
    let mut trainer = Trainer::new(model, tc, ScheduleConfig::desk())?;
    let start = Instant::now();
    while trainer.steps() < steps {
        let r = trainer.step(&train)?;
        if r.step % 100 == 0 || r.step == steps {
            let acc = accuracy(&trainer.model, &val, 64)?;
            println!(
                "step {:>5}  loss {:.4}  lr {:.2e}  grad norm {:.3}  val {acc:.4}  {:.0}s",
                r.step,
                r.loss,
                r.lr,
                r.grad_norm,
                start.elapsed().as_secs_f64()
            );
        }
    }
    let (model, _) = trainer.into_parts();
    save_checkpoint(ckpt.as_ref(), &model, Some(&vocab))?;
    println!("saved {ckpt}");
    Ok(())
}
