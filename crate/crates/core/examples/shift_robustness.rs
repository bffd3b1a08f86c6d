//! Coverage degradation as test inputs are displaced.
//!
//! cargo run --release -p calpro --example shift_robustness

use calpro::experiments::{run_shift_experiment, ExperimentSpec};

fn main() -> calpro::Result<()> {
    let spec = ExperimentSpec {
        seeds: (0..3).collect(),
        ..Default::default()
    };
    let r = run_shift_experiment(&spec)?;
    println!(
        "{:<10} {:>9} {:>9} {:>12}",
        "arm", "magnitude", "coverage", "degradation"
    );
    for s in &r.summary {
        println!(
            "{:<10} {:>9} {:>9.4} {:>12.4}",
            s.ablation.name(),
            s.magnitude,
            s.median_coverage,
            s.median_degradation
        );
    }
    Ok(())
}
