//! Finite-difference check of every training objective on a small model.
//!
//! cargo run --release --example gradcheck

use monet::harness::{run_gradcheck, GradCheckConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let start = std::time::Instant::now();
    let reports = run_gradcheck(&GradCheckConfig::default())?;
    println!("{:<16} {:>8} {:>10} {:>10}", "objective", "coords", "max_rel", "max_abs");
    for r in &reports {
        println!(
            "{:<16} {:>8} {:>10.2e} {:>10.2e}{}",
            r.objective,
            r.report.checked,
            r.report.max_rel,
            r.report.max_abs,
            if r.report.failures.is_empty() { "" } else { "  FAIL" }
        );
    }
    println!("{:.1?}", start.elapsed());
    Ok(())
}
