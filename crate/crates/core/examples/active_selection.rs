//! Acquisition strategies compared on a small pool.
//!
//! cargo run --release -p calpro --example active_selection

use calpro::active::{compare_strategies, ActiveConfig, Strategy};
use calpro::data::{gen_chain_dataset, GeneratorConfig};

fn main() -> calpro::Result<()> {
    let pool = gen_chain_dataset(&GeneratorConfig {
        seed: 9,
        ..Default::default()
    })?;
    let configs: Vec<ActiveConfig> = Strategy::ALL
        .iter()
        .map(|&strategy| ActiveConfig {
            strategy,
            rounds: 4,
            ..Default::default()
        })
        .collect();
    let cmp = compare_strategies(&pool, &configs, &[0, 1, 2, 3])?;
    println!("budget {} queries over seeds {:?}", cmp.budget, cmp.seeds);
    for s in &cmp.strategies {
        println!(
            "{:<14} median queries to top {:>5.1}  hit rate {:.2}  final best {:.3}  coverage {:.3}",
            s.strategy.name(),
            s.median_queries_to_target,
            s.hit_rate,
            s.best_found.median.last().copied().unwrap_or(f64::NAN),
            s.coverage.median.last().copied().unwrap_or(f64::NAN),
        );
    }
    println!("ordering: {:?}", cmp.ordering);
    Ok(())
}
