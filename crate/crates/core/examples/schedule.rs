//! Learning-rate schedule and gradient clipping.

use ucdnet::autodiff::Tensor;
use ucdnet::training::{clip_global_norm, lr_at, ScheduleConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, s) in [("paper", ScheduleConfig::paper()), ("desk", ScheduleConfig::desk())] {
        println!("{name}: alpha {:.5}, warmup {}", s.alpha, s.warmup_steps);
        for t in [1, s.warmup_steps / 2, s.warmup_steps, 2 * s.warmup_steps, 10 * s.warmup_steps] {
            println!("  step {t:>7}  lr {:.3e}", lr_at(t, &s)?);
        }
    }

    let mut grads = vec![Tensor::from_fn(&[4], |i| i as f64), Tensor::from_fn(&[2, 2], |i| -(i as f64) / 2.0)];
    let names = ["a".to_string(), "b".to_string()];
    let clip = clip_global_norm(&mut grads, &names, 0.1)?;
    println!("\nclip: norm {:.4} -> scale {:.5}", clip.norm, clip.scale);
    println!("  a = {:?}", grads[0].data());
    Ok(())
}
