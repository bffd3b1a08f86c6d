//! Train the head, calibrate on held-out nodes and report test metrics.
//!
//! cargo run --release -p calpro --example train_and_calibrate

use calpro::conformal::{calibrate, ScoreMode, DEFAULT_LEVELS};
use calpro::data::{gen_chain_dataset, GeneratorConfig, Split};
use calpro::metrics::{evaluate, IntervalMethod};
use calpro::trainer::{train, TrainConfig};

fn main() -> calpro::Result<()> {
    let ds = gen_chain_dataset(&GeneratorConfig {
        seed: 1,
        ..Default::default()
    })?;
    let model = train(
        &TrainConfig {
            seed: 1,
            ..TrainConfig::desk()
        },
        &ds,
    )?;
    let r = &model.record;
    println!(
        "trained {} epochs, kept epoch {}, val ece {:.4} -> {:.4}",
        r.epochs.len(),
        r.selected_epoch,
        r.initial_val_ece,
        r.epochs
            .get(r.selected_epoch.saturating_sub(1))
            .map_or(r.initial_val_ece, |e| e.val_ece)
    );

    let preds = model.predict(&ds)?;
    let test = ds.nodes_in(Split::Test);
    for mode in [ScoreMode::Absolute, ScoreMode::Normalized] {
        let calib = calibrate(&preds, &ds, &DEFAULT_LEVELS, mode)?;
        let m = evaluate(IntervalMethod::Conformal(&calib), &preds, &ds, &test)?;
        println!(
            "\n{} (ece {:.4}, spearman {:?})",
            m.method, m.ece, m.spearman
        );
        for l in &m.levels {
            println!(
                "  level {:.2}: coverage {:.4}, mean width {:.4}",
                l.level, l.coverage, l.sharpness
            );
        }
        for g in &m.segments {
            println!(
                "  segment {:<10} n {:>4} coverage {:?}",
                g.name, g.count, g.coverage
            );
        }
    }
    let g = evaluate(IntervalMethod::Gaussian, &preds, &ds, &test)?;
    println!("\nuncalibrated gaussian intervals: ece {:.4}", g.ece);
    Ok(())
}
