use serde::{Deserialize, Serialize};

use super::shift::shifted;
use super::{fan_out, fit, median_of, perturb_seed, source_data, ExperimentSpec};
use crate::bounds::{
    bound_vs_empirical_sweep, ncal_sweep, BoundReport, NcalSweep, Shifted, SweepContext,
};
use crate::data::{
    gen_chain_dataset, perturb, GeneratorConfig, PerturbationKind, Split, SplitMode,
};
use crate::error::Result;

/// Per-condition medians across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConditionSummary {
    pub magnitude: f64,
    pub median_epsilon: f64,
    pub median_bound: f64,
    pub median_bound_raw: f64,
    pub median_empirical: f64,
    pub conservative_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundExperiment {
    pub summary: Vec<BoundConditionSummary>,
    /// Median bound at most median empirical coverage at every condition.
    pub conservative_in_median: bool,
    pub bound_nonincreasing_in_median: bool,
    pub per_seed: Vec<(u64, BoundReport)>,
}

/// Bound against empirical coverage along the recipe's shift series.
pub fn run_bound_experiment(spec: &ExperimentSpec) -> Result<BoundExperiment> {
    spec.validate()?;
    let mut settings = spec.bounds;
    settings.tau = spec.tau;
    let per_seed = fan_out(&spec.seeds, |seed| {
        let (ds, cfg) = source_data(spec, seed)?;
        let f = fit(&cfg, &ds, &spec.levels, Some(spec.score_mode))?;
        let conditions = spec
            .shift
            .magnitudes
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                let d = shifted(&ds, spec.shift.kind, m, perturb_seed(seed, k as u64))?;
                let p = f.model.predict(&d)?;
                Ok((m, d, p))
            })
            .collect::<Result<Vec<_>>>()?;
        let series: Vec<Shifted> = conditions
            .iter()
            .map(|(m, d, p)| Shifted {
                label: format!("{}:{m}", spec.shift.kind.name()),
                magnitude: *m,
                data: d,
                preds: p,
            })
            .collect();
        let ctx = SweepContext {
            weights: &f.model.head.weights,
            calib: f.calib.as_ref().expect("calibrated"),
            reference: &ds,
            reference_preds: &f.preds,
            cal_nodes: &ds.nodes_in(Split::Calibration),
            test_nodes: &ds.nodes_in(Split::Test),
        };
        Ok((seed, bound_vs_empirical_sweep(&ctx, &series, &settings)?))
    })?;
    let n = spec.shift.magnitudes.len();
    let summary: Vec<BoundConditionSummary> = (0..n)
        .map(|k| {
            let conds: Vec<_> = per_seed
                .iter()
                .map(|(_, r)| r.conditions[k].clone())
                .collect();
            let all = |_: &_| true;
            BoundConditionSummary {
                magnitude: spec.shift.magnitudes[k],
                median_epsilon: median_of(&conds, all, |c| c.epsilon),
                median_bound: median_of(&conds, all, |c| c.bound.value),
                median_bound_raw: median_of(&conds, all, |c| c.bound.raw),
                median_empirical: median_of(&conds, all, |c| c.empirical),
                conservative_fraction: conds.iter().filter(|c| c.conservative).count() as f64
                    / conds.len() as f64,
            }
        })
        .collect();
    Ok(BoundExperiment {
        conservative_in_median: summary.iter().all(|s| s.median_bound <= s.median_empirical),
        bound_nonincreasing_in_median: summary
            .windows(2)
            .all(|w| w[1].median_bound <= w[0].median_bound),
        summary,
        per_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcalSummary {
    pub n_cal: usize,
    pub median_bound: f64,
    pub median_bound_raw: f64,
    pub median_empirical: f64,
    pub median_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcalExperiment {
    pub magnitude: f64,
    pub summary: Vec<NcalSummary>,
    pub gap_nonincreasing_in_median: bool,
    pub per_seed: Vec<(u64, NcalSweep)>,
}

/// Generator for the calibration pool: same settings, every node tagged calibration.
pub fn pool_generator(spec: &ExperimentSpec, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_chains: spec.ncal.pool_chains,
        split_fractions: [0.0, 1.0, 0.0],
        split_mode: SplitMode::FamilyAware,
        seed: perturb_seed(seed, 300),
        ..spec.generator.clone()
    }
}

/// Calibration-set size sweep on one shifted test condition.
pub fn run_ncal_experiment(spec: &ExperimentSpec) -> Result<NcalExperiment> {
    spec.validate()?;
    let mut settings = spec.bounds;
    settings.tau = spec.tau;
    let per_seed = fan_out(&spec.seeds, |seed| {
        let (ds, cfg) = source_data(spec, seed)?;
        let f = fit(&cfg, &ds, &spec.levels, None)?;
        let pool =
            gen_chain_dataset(&pool_generator(spec, seed)).map_err(|e| e.in_stage("pool"))?;
        let pool_preds = f.model.predict(&pool)?;
        let shifted_ds = perturb(
            &ds,
            PerturbationKind::Gaussian,
            spec.ncal.magnitude,
            perturb_seed(seed, 301),
        )?;
        let shifted_preds = f.model.predict(&shifted_ds)?;
        let cond = Shifted {
            label: format!("gaussian:{}", spec.ncal.magnitude),
            magnitude: spec.ncal.magnitude,
            data: &shifted_ds,
            preds: &shifted_preds,
        };
        let sweep = ncal_sweep(
            &f.model.head.weights,
            &pool,
            &pool_preds,
            &pool.nodes_in(Split::Calibration),
            &cond,
            &ds,
            &ds.nodes_in(Split::Test),
            &spec.ncal.sizes,
            spec.score_mode,
            &settings,
            seed,
        )?;
        Ok((seed, sweep))
    })?;
    let summary: Vec<NcalSummary> = spec
        .ncal
        .sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let rows: Vec<_> = per_seed.iter().map(|(_, s)| s.rows[k].clone()).collect();
            let all = |_: &_| true;
            NcalSummary {
                n_cal: n,
                median_bound: median_of(&rows, all, |r| r.bound.value),
                median_bound_raw: median_of(&rows, all, |r| r.bound.raw),
                median_empirical: median_of(&rows, all, |r| r.empirical),
                median_gap: median_of(&rows, all, |r| r.gap),
            }
        })
        .collect();
    Ok(NcalExperiment {
        magnitude: spec.ncal.magnitude,
        gap_nonincreasing_in_median: summary
            .windows(2)
            .all(|w| w[1].median_gap <= w[0].median_gap),
        summary,
        per_seed,
    })
}
