//! Multi-seed ablation of the conformal step, evidential head and priors.
//!
//! cargo run --release -p calpro --example ablation_study

use calpro::experiments::{run_calibration_experiment, ExperimentSpec};

fn main() -> calpro::Result<()> {
    let spec = ExperimentSpec {
        seeds: (0..4).collect(),
        ..Default::default()
    };
    let r = run_calibration_experiment(&spec)?;
    println!("target coverage {}, scores {}", r.tau, r.score_mode.name());
    println!(
        "{:<14} {:>9} {:>9} {:>9} {:>9}",
        "configuration", "coverage", "|dev|", "width", "ece"
    );
    for s in &r.summary {
        println!(
            "{:<14} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            s.ablation.name(),
            s.median_coverage,
            s.median_deviation,
            s.median_sharpness,
            s.median_ece
        );
    }
    Ok(())
}
