use serde::{Deserialize, Serialize};

use super::{fan_out, fit, median_of, perturb_seed, source_data, ExperimentSpec};
use crate::data::{corrupt_priors, Split};
use crate::error::Result;
use crate::metrics::{evaluate, IntervalMethod};

pub const CLEAN: &str = "clean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRow {
    pub seed: u64,
    pub mode: String,
    pub coverage: f64,
    pub degradation: f64,
    pub sharpness: f64,
    pub ece: f64,
    /// Coverage minus the clean run's coverage for the same seed.
    pub coverage_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSummary {
    pub mode: String,
    pub median_coverage: f64,
    pub median_degradation: f64,
    pub median_sharpness: f64,
    pub median_ece: f64,
    pub median_coverage_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub tau: f64,
    pub summary: Vec<CorruptionSummary>,
    pub rows: Vec<CorruptionRow>,
}

impl CorruptionReport {
    pub fn summary_of(&self, mode: &str) -> Option<&CorruptionSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }
}

/// Retrains the full configuration on data whose priors were corrupted
/// (every split), with all other settings unchanged.
pub fn run_prior_corruption(spec: &ExperimentSpec) -> Result<CorruptionReport> {
    spec.validate()?;
    let per_seed = fan_out(&spec.seeds, |seed| {
        let (clean, cfg) = source_data(spec, seed)?;
        let test = clean.nodes_in(Split::Test);
        let mut datasets = vec![(CLEAN.to_string(), clean.clone())];
        for (k, &mode) in spec.corruptions.iter().enumerate() {
            datasets.push((
                mode.name(),
                corrupt_priors(&clean, mode, perturb_seed(seed, 200 + k as u64))?,
            ));
        }
        let mut rows: Vec<CorruptionRow> = Vec::new();
        for (name, ds) in &datasets {
            let f = fit(&cfg, ds, &spec.levels, Some(spec.score_mode))
                .map_err(|e| e.in_stage(name.clone()))?;
            let report = evaluate(
                IntervalMethod::Conformal(f.calib.as_ref().expect("calibrated")),
                &f.preds,
                ds,
                &test,
            )?;
            let lv = report.level(spec.tau).expect("tau is a calibrated level");
            let base = rows.first().map_or(lv.coverage, |r| r.coverage);
            rows.push(CorruptionRow {
                seed,
                mode: name.clone(),
                coverage: lv.coverage,
                degradation: spec.tau - lv.coverage,
                sharpness: lv.sharpness,
                ece: report.ece,
                coverage_shift: lv.coverage - base,
            });
        }
        Ok(rows)
    })?;
    let rows: Vec<CorruptionRow> = per_seed.into_iter().flatten().collect();
    let modes: Vec<String> = std::iter::once(CLEAN.to_string())
        .chain(spec.corruptions.iter().map(|m| m.name()))
        .collect();
    let summary = modes
        .into_iter()
        .map(|mode| {
            let m = |f: fn(&CorruptionRow) -> f64| median_of(&rows, |r| r.mode == mode, f);
            CorruptionSummary {
                median_coverage: m(|r| r.coverage),
                median_degradation: m(|r| r.degradation),
                median_sharpness: m(|r| r.sharpness),
                median_ece: m(|r| r.ece),
                median_coverage_shift: m(|r| r.coverage_shift),
                mode,
            }
        })
        .collect();
    Ok(CorruptionReport {
        tau: spec.tau,
        summary,
        rows,
    })
}
