use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{validate_fractions, Dataset, Split};
use crate::error::Result;
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Each node drawn independently.
    Random,
    /// Whole graphs (chain families) go to a single split.
    FamilyAware,
}

/// Assigns train/calibration/test tags with the given fractions.
pub fn split(ds: &Dataset, fractions: [f64; 3], mode: SplitMode, seed: u64) -> Result<Dataset> {
    validate_fractions(&fractions)?;
    let mut rng = RngStream::new(seed, 2).rng();
    let mut out = ds.clone();
    match mode {
        SplitMode::Random => {
            for tag in out.splits.iter_mut() {
                let u: f64 = rng.random();
                *tag = if u < fractions[0] {
                    Split::Train
                } else if u < fractions[0] + fractions[1] {
                    Split::Calibration
                } else {
                    Split::Test
                };
            }
        }
        SplitMode::FamilyAware => {
            let g = ds.n_graphs();
            let mut order: Vec<usize> = (0..g).collect();
            order.shuffle(&mut rng);
            let n_train = ((fractions[0] * g as f64).round() as usize).min(g);
            let n_cal = ((fractions[1] * g as f64).round() as usize).min(g - n_train);
            for (rank, &graph) in order.iter().enumerate() {
                let tag = if rank < n_train {
                    Split::Train
                } else if rank < n_train + n_cal {
                    Split::Calibration
                } else {
                    Split::Test
                };
                for i in ds.graph_nodes(graph) {
                    out.splits[i] = tag;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_chain_dataset, GeneratorConfig};

    fn ten_by_fifty() -> Dataset {
        gen_chain_dataset(&GeneratorConfig {
            n_chains: 10,
            chain_length: 50,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn family_aware_counts_whole_chains() {
        let ds = split(&ten_by_fifty(), [0.6, 0.2, 0.2], SplitMode::FamilyAware, 4).unwrap();
        let mut per_split = [0; 3];
        for g in 0..ds.n_graphs() {
            let tags: Vec<Split> = ds.graph_nodes(g).map(|i| ds.splits[i]).collect();
            assert!(
                tags.iter().all(|t| *t == tags[0]),
                "chain {g} spans two splits"
            );
            per_split[tags[0] as usize] += 1;
        }
        assert_eq!(per_split, [6, 2, 2]);
    }

    #[test]
    fn random_all_train() {
        let ds = split(&ten_by_fifty(), [1.0, 0.0, 0.0], SplitMode::Random, 1).unwrap();
        assert!(ds.splits.iter().all(|s| *s == Split::Train));
    }

    #[test]
    fn invalid_fractions_rejected() {
        assert!(split(&ten_by_fifty(), [0.7, 0.2, 0.2], SplitMode::Random, 1).is_err());
        assert!(split(&ten_by_fifty(), [1.2, -0.2, 0.0], SplitMode::Random, 1).is_err());
    }
}
