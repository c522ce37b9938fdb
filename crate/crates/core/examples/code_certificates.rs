//! Codes hand-written certificates: the rule coder's answer next to the
//! network's top two with confidences.

use ucdnet::certificate::{CausalChain, Certificate, Demographics};
use ucdnet::model::{predict_topk, Example, Model, ModelConfig};
use ucdnet::synth::{build_world, generate_dataset, rule_code, SplitSpec, WorldKnobs};
use ucdnet::training::{train, LabeledSet, ScheduleConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = build_world(1, WorldKnobs::default())?;
    let vocab = world.vocabulary();
    let split = SplitSpec {
        validation_per_year: 1,
        test_per_year: 1,
    };
    let data = generate_dataset(&world, 12_000, split, 2)?;
    let cfg = ModelConfig::desk(vocab.len());
    let set = LabeledSet::from_certificates(&data.train, &vocab, cfg.width, None)?;
    let tc = TrainConfig {
        total_steps: 400,
        ..TrainConfig::desk()
    };
    let (model, _): (Model, _) = train(Model::new(cfg, 0)?, &set, None, tc, ScheduleConfig::desk())?;

    // certificates drawn from the world, then re-written with a fresh id
    let mut certs: Vec<Certificate> = data.test.iter().take(5).cloned().collect();
    let lines = vec![vec![certs[0].chain.part_one()[0][0]]];
    certs.push(Certificate {
        id: "handwritten".into(),
        chain: CausalChain::from_parts(&lines, &[])?,
        demo: Demographics::new(2, 14, 2011)?,
        label: None,
        rule_output: None,
    });

    for cert in &certs {
        let ex = Example::encode(cert, &vocab, model.config.width, None)?;
        let out = model.predict(std::slice::from_ref(&ex), 1)?;
        let top = &predict_topk(&out, &vocab, 2)?[0];
        let rule = rule_code(cert, &world)?;
        println!(
            "{:<12} label {:<6} rule {:<12} model {} ({:.3}), {} ({:.3})",
            cert.id,
            cert.label.map(|c| c.to_string()).unwrap_or("-".into()),
            rule.output.code().map(|c| c.to_string()).unwrap_or("reject".into()),
            top[0].0,
            top[0].1,
            top[1].0,
            top[1].1
        );
    }
    Ok(())
}
