//! Budgeted active-selection simulation.
//!
//! Test-tagged nodes form a fixed evaluation set; every other node belongs to
//! the pool. Each round retrains on the labeled nodes (75/25 train and
//! calibration), scores the unlabeled pool and queries the top batch.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate, ScoreMode};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::experiments::fan_out;
use crate::metrics::{coverage, default_grid, ece, IntervalMethod};
use crate::numerics::{median, percentile, RngStream};
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Calibrated interval width in normalized mode.
    CalproWidth,
    /// `beta / (nu (alpha - 1))`.
    EpistemicVar,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::CalproWidth,
        Strategy::EpistemicVar,
        Strategy::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::CalproWidth => "calpro_width",
            Strategy::EpistemicVar => "epistemic_var",
            Strategy::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveConfig {
    pub seed_size: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub strategy: Strategy,
    /// Seed and head init seed are replaced by `seed`.
    pub retrain: TrainConfig,
    /// Share of the labeled set used for calibration each round.
    pub calibration_fraction: f64,
    /// Pool nodes at or above this upper quantile of target form the attainment set.
    pub top_fraction: f64,
    pub tau: f64,
    pub seed: u64,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            seed_size: 40,
            batch_size: 5,
            rounds: 6,
            strategy: Strategy::CalproWidth,
            retrain: TrainConfig {
                max_epochs: 60,
                patience: 20,
                ..TrainConfig::desk()
            },
            calibration_fraction: 0.25,
            top_fraction: 0.05,
            tau: 0.9,
            seed: 0,
        }
    }
}

impl ActiveConfig {
    pub fn budget(&self) -> usize {
        self.batch_size * self.rounds
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed_size < 8 {
            return Err(Error::config("active.seed_size", "must be at least 8"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("active.batch_size", "must be positive"));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(Error::config(
                "active.calibration_fraction",
                "must lie in (0, 1)",
            ));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction < 1.0) {
            return Err(Error::config("active.top_fraction", "must lie in (0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config("active.tau", "must lie in (0, 1)"));
        }
        self.retrain.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Nodes queried in this round, in acquisition order (empty for round 0).
    pub queried: Vec<usize>,
    /// Cumulative queries after this round.
    pub queries: usize,
    /// Largest target in the labeled set.
    pub best_found: f64,
    pub coverage: f64,
    pub ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveCurve {
    pub strategy: Strategy,
    pub seed: u64,
    pub seed_set: Vec<usize>,
    pub top_threshold: f64,
    pub n_top: usize,
    /// 1-based position in the query sequence of the first attainment-set hit.
    pub queries_to_target: Option<usize>,
    pub rounds: Vec<RoundRecord>,
}

/// Labeled nodes split into train and calibration tags; the rest tagged test
/// so they never contribute to training or calibration.
fn labeled_view(pool: &Dataset, labeled: &[usize], cal_fraction: f64, seed: u64) -> Dataset {
    let mut order = labeled.to_vec();
    order.sort_unstable();
    order.shuffle(&mut RngStream::new(seed, 0x6c61_6265).rng());
    let n_cal = ((order.len() as f64 * cal_fraction).round() as usize).clamp(1, order.len() - 1);
    let mut view = pool.clone();
    view.splits.fill(Split::Test);
    for (k, &i) in order.iter().enumerate() {
        view.splits[i] = if k < n_cal {
            Split::Calibration
        } else {
            Split::Train
        };
    }
    view
}

fn acquisition(
    strategy: Strategy,
    widths: &[f64],
    epistemic: &[f64],
    candidates: &[usize],
    rng: &mut impl Rng,
) -> Vec<f64> {
    candidates
        .iter()
        .map(|&i| match strategy {
            Strategy::CalproWidth => widths[i],
            Strategy::EpistemicVar => epistemic[i],
            Strategy::Random => rng.random::<f64>(),
        })
        .collect()
}

/// Runs the rounds of one strategy on one seed.
pub fn run_active(pool: &Dataset, cfg: &ActiveConfig) -> Result<ActiveCurve> {
    cfg.validate()?;
    let eval = pool.nodes_in(Split::Test);
    if eval.is_empty() {
        return Err(Error::Empty("evaluation nodes (test split)"));
    }
    let mut unlabeled: Vec<usize> = (0..pool.len())
        .filter(|&i| pool.splits[i] != Split::Test)
        .collect();
    if cfg.seed_size + cfg.budget() > unlabeled.len() {
        return Err(Error::Infeasible(format!(
            "pool of {} nodes is exhausted by seed set {} plus budget {}",
            unlabeled.len(),
            cfg.seed_size,
            cfg.budget()
        )));
    }
    let root = RngStream::new(cfg.seed, 0x6163_7469);
    unlabeled.shuffle(&mut root.child(0).rng());
    let mut labeled: Vec<usize> = unlabeled.drain(..cfg.seed_size).collect();
    unlabeled.sort_unstable();
    let seed_set = {
        let mut s = labeled.clone();
        s.sort_unstable();
        s
    };

    let targets: Vec<f64> = unlabeled.iter().map(|&i| pool.nodes[i].target_y).collect();
    let top_threshold = percentile(&targets, 1.0 - cfg.top_fraction);
    let n_top = targets.iter().filter(|&&t| t >= top_threshold).count();

    let mut tcfg = cfg.retrain.clone();
    tcfg.seed = cfg.seed;
    tcfg.head.init_seed = cfg.seed;
    let y_eval: Vec<f64> = eval.iter().map(|&i| pool.nodes[i].target_y).collect();
    let mut pick_rng = root.child(1).rng();
    let mut rounds = Vec::with_capacity(cfg.rounds + 1);
    let mut queried_total = 0;
    let mut queries_to_target = None;
    let mut queried: Vec<usize> = Vec::new();
    for round in 0..=cfg.rounds {
        let view = labeled_view(
            pool,
            &labeled,
            cfg.calibration_fraction,
            cfg.seed.wrapping_add(round as u64),
        );
        let model = train(&tcfg, &view).map_err(|e| e.in_stage(format!("active round {round}")))?;
        let preds = model.predict(&view)?;
        let calib = calibrate(&preds, &view, &[cfg.tau], ScoreMode::Normalized)?;
        let p_eval: Vec<_> = eval.iter().map(|&i| preds[i]).collect();
        let cov = coverage(&calib.intervals_at(&p_eval, cfg.tau)?, &y_eval)?;
        let e = ece(
            IntervalMethod::Conformal(&calib),
            &p_eval,
            &y_eval,
            &default_grid(),
        )?;
        let best_found = labeled
            .iter()
            .map(|&i| pool.nodes[i].target_y)
            .fold(f64::NEG_INFINITY, f64::max);
        rounds.push(RoundRecord {
            round,
            queried: std::mem::take(&mut queried),
            queries: queried_total,
            best_found,
            coverage: cov,
            ece: e,
        });
        if round == cfg.rounds {
            break;
        }

        let widths: Vec<f64> = preds
            .iter()
            .map(|p| 2.0 * calib.quantiles[0] * ScoreMode::Normalized.scale(p))
            .collect();
        let epistemic: Vec<f64> = preds.iter().map(|p| p.epistemic_variance()).collect();
        let scores = acquisition(cfg.strategy, &widths, &epistemic, &unlabeled, &mut pick_rng);
        let mut order: Vec<usize> = (0..unlabeled.len()).collect();
        // descending score, ties by node index
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then(unlabeled[a].cmp(&unlabeled[b]))
        });
        let picks: Vec<usize> = order[..cfg.batch_size]
            .iter()
            .map(|&k| unlabeled[k])
            .collect();
        for &i in &picks {
            queried_total += 1;
            if queries_to_target.is_none() && pool.nodes[i].target_y >= top_threshold {
                queries_to_target = Some(queried_total);
            }
        }
        unlabeled.retain(|i| !picks.contains(i));
        labeled.extend(&picks);
        queried = picks;
    }
    Ok(ActiveCurve {
        strategy: cfg.strategy,
        seed: cfg.seed,
        seed_set,
        top_threshold,
        n_top,
        queries_to_target,
        rounds,
    })
}

/// Median and interquartile band of one quantity per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub median: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
}

impl Band {
    fn over(curves: &[ActiveCurve], f: impl Fn(&RoundRecord) -> f64) -> Band {
        let n = curves.first().map_or(0, |c| c.rounds.len());
        let col = |r: usize| curves.iter().map(|c| f(&c.rounds[r])).collect::<Vec<_>>();
        Band {
            median: (0..n).map(|r| median(&col(r))).collect(),
            q25: (0..n).map(|r| percentile(&col(r), 0.25)).collect(),
            q75: (0..n).map(|r| percentile(&col(r), 0.75)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub best_found: Band,
    pub coverage: Band,
    pub ece: Band,
    /// Misses count as `budget + 1`.
    pub median_queries_to_target: f64,
    pub hit_rate: f64,
    /// Mean over rounds 1..=R of the share of seeds that reached the attainment set.
    pub attainment_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveComparison {
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub strategies: Vec<StrategySummary>,
    /// Strategy names by decreasing attainment AUC (ties keep config order).
    pub ordering: Vec<String>,
    /// `1 - median queries / median queries of random`, per strategy, when random ran.
    pub query_savings: Vec<(String, f64)>,
    pub curves: Vec<ActiveCurve>,
}

impl ActiveComparison {
    pub fn summary_of(&self, s: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|x| x.strategy == s)
    }
}

/// Runs every config on every seed against the same pool.
pub fn compare_strategies(
    pool: &Dataset,
    configs: &[ActiveConfig],
    seeds: &[u64],
) -> Result<ActiveComparison> {
    let first = configs.first().ok_or(Error::Empty("strategy configs"))?;
    if seeds.is_empty() {
        return Err(Error::Empty("seeds"));
    }
    let budget = first.budget();
    if configs
        .iter()
        .any(|c| c.budget() != budget || c.rounds != first.rounds)
    {
        return Err(Error::Domain(
            "strategies must share batch size and rounds".into(),
        ));
    }
    let mut strategies = Vec::new();
    let mut curves = Vec::new();
    for cfg in configs {
        let runs = fan_out(seeds, |seed| {
            run_active(
                pool,
                &ActiveConfig {
                    seed,
                    ..cfg.clone()
                },
            )
        })?;
        let q: Vec<f64> = runs
            .iter()
            .map(|c| c.queries_to_target.unwrap_or(budget + 1) as f64)
            .collect();
        let reached =
            |r: &RoundRecord, c: &ActiveCurve| c.queries_to_target.is_some_and(|k| k <= r.queries);
        let rounds = first.rounds.max(1);
        let auc = (1..=first.rounds)
            .map(|r| {
                runs.iter().filter(|c| reached(&c.rounds[r], c)).count() as f64 / runs.len() as f64
            })
            .sum::<f64>()
            / rounds as f64;
        strategies.push(StrategySummary {
            strategy: cfg.strategy,
            best_found: Band::over(&runs, |r| r.best_found),
            coverage: Band::over(&runs, |r| r.coverage),
            ece: Band::over(&runs, |r| r.ece),
            median_queries_to_target: median(&q),
            hit_rate: runs
                .iter()
                .filter(|c| c.queries_to_target.is_some())
                .count() as f64
                / runs.len() as f64,
            attainment_auc: auc,
        });
        curves.extend(runs);
    }
    let mut order: Vec<usize> = (0..strategies.len()).collect();
    order.sort_by(|&a, &b| {
        strategies[b]
            .attainment_auc
            .total_cmp(&strategies[a].attainment_auc)
            .then(a.cmp(&b))
    });
    let random = strategies
        .iter()
        .find(|s| s.strategy == Strategy::Random)
        .map(|s| s.median_queries_to_target);
    let query_savings = match random {
        Some(r) if r > 0.0 => strategies
            .iter()
            .map(|s| {
                (
                    s.strategy.name().to_string(),
                    1.0 - s.median_queries_to_target / r,
                )
            })
            .collect(),
        _ => Vec::new(),
    };
    Ok(ActiveComparison {
        budget,
        seeds: seeds.to_vec(),
        ordering: order
            .iter()
            .map(|&k| strategies[k].strategy.name().to_string())
            .collect(),
        strategies,
        query_savings,
        curves,
    })
}

/// `round,queries,best_found,coverage,ece` rows of one curve.
pub fn curve_rows(c: &ActiveCurve) -> Vec<Vec<String>> {
    c.rounds
        .iter()
        .map(|r| {
            vec![
                c.strategy.name().to_string(),
                c.seed.to_string(),
                r.round.to_string(),
                r.queries.to_string(),
                r.best_found.to_string(),
                r.coverage.to_string(),
                r.ece.to_string(),
            ]
        })
        .collect()
}

pub const CURVE_HEADER: [&str; 7] = [
    "strategy",
    "seed",
    "round",
    "queries",
    "best_found",
    "coverage",
    "ece",
];
