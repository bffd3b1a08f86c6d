//! Synthetic chain corpus, a shifted copy, and a prior corruption.
//!
//! cargo run -p calpro --example generate_data

use calpro::cli::summarize;
use calpro::data::{
    corrupt_priors, gen_chain_dataset, perturb, CorruptionMode, GeneratorConfig, PerturbationKind,
    Split,
};
use calpro::numerics::{mean, pearson};

fn main() -> calpro::Result<()> {
    let cfg = GeneratorConfig {
        n_chains: 12,
        seed: 4,
        ..Default::default()
    };
    let ds = gen_chain_dataset(&cfg)?;
    let s = summarize(&ds);
    println!(
        "{} nodes, {} edges, {} graphs",
        s.n_nodes, s.n_edges, s.n_graphs
    );
    println!("train/cal/test nodes: {:?}", s.split_counts);
    println!("disordered fraction: {:.3}", s.disordered_fraction);
    println!(
        "mean target ordered {:?} disordered {:?}",
        s.mean_target_ordered, s.mean_target_disordered
    );
    println!(
        "prior/target correlation: {:?}",
        pearson(&ds.priors(), &ds.targets())
    );

    let shifted = perturb(&ds, PerturbationKind::Gaussian, 0.5, 1)?;
    let test = ds.nodes_in(Split::Test);
    let moved: Vec<f64> = test
        .iter()
        .map(|&i| {
            let (a, b) = (&ds.nodes[i].features, &shifted.nodes[i].features);
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    println!(
        "\nmean feature displacement under gaussian:0.5 = {:.4}",
        mean(&moved)
    );

    for mode in [
        CorruptionMode::Shuffle,
        CorruptionMode::Invert,
        CorruptionMode::Noise(0.2),
    ] {
        let c = corrupt_priors(&ds, mode, 2)?;
        println!(
            "{:<10} prior/target correlation {:?}",
            mode.name(),
            pearson(&c.priors(), &c.targets())
        );
    }
    Ok(())
}
