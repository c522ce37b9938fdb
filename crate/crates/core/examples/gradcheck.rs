//! Finite-difference check of every primitive, block and the full model.
//!
//!     cargo run --release --example gradcheck -- [toy|desk]

use ucdnet::model::{gradient_suite, SuiteScale};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scale: SuiteScale = std::env::args().nth(1).unwrap_or_else(|| "toy".into()).parse()?;
    let report = gradient_suite(scale, 1e-4)?;
    for c in &report.cases {
        let mark = if c.failures.is_empty() { "ok  " } else { "FAIL" };
        println!(
            "{mark} {:<48} {:>6} coords  max rel err {:.2e}  kinks {}",
            c.name, c.checked, c.max_rel_err, c.non_differentiable.len()
        );
    }
    println!("{} passed, {} failed", report.cases.len() - report.failed().count(), report.failed().count());
    Ok(())
}
