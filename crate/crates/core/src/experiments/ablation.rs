use serde::{Deserialize, Serialize};

use super::{
    binomial_half_width, fan_out, fit, median_of, source_data, vanilla_objective, Ablation,
    ExperimentSpec, Fitted,
};
use crate::conformal::ScoreMode;
use crate::data::Split;
use crate::error::Result;
use crate::metrics::{evaluate, IntervalMethod, MetricsReport};
use crate::numerics::mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub ablation: Ablation,
    pub coverage: f64,
    /// `|coverage - tau|`.
    pub deviation: f64,
    pub sharpness: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub ablation: Ablation,
    pub median_coverage: f64,
    pub median_deviation: f64,
    pub median_sharpness: f64,
    pub median_ece: f64,
    pub median_spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub tau: f64,
    pub score_mode: ScoreMode,
    pub summary: Vec<AblationSummary>,
    pub rows: Vec<AblationRow>,
}

impl CalibrationReport {
    pub fn summary_of(&self, a: Ablation) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.ablation == a)
    }
}

/// Trains each requested configuration and evaluates it on the test split.
pub fn run_calibration_experiment(spec: &ExperimentSpec) -> Result<CalibrationReport> {
    spec.validate()?;
    let per_seed = fan_out(&spec.seeds, |seed| {
        let (ds, base) = source_data(spec, seed)?;
        let test = ds.nodes_in(Split::Test);
        let mut trained: Vec<(Ablation, Fitted)> = Vec::new();
        let mut rows = Vec::new();
        for &a in &spec.ablations {
            let key = a.trained_as();
            if !trained.iter().any(|(k, _)| *k == key) {
                let mode = key.score_mode(spec.score_mode);
                trained.push((key, fit(&key.train_config(&base), &ds, &spec.levels, mode)?));
            }
            let f = &trained
                .iter()
                .find(|(k, _)| *k == key)
                .expect("trained above")
                .1;
            let method = match (a.score_mode(spec.score_mode), &f.calib) {
                (Some(_), Some(c)) => IntervalMethod::Conformal(c),
                _ => IntervalMethod::Gaussian,
            };
            let report = evaluate(method, &f.preds, &ds, &test)?;
            let lv = report
                .level(spec.tau)
                .copied()
                .unwrap_or(crate::metrics::LevelStats {
                    level: spec.tau,
                    coverage: f64::NAN,
                    sharpness: f64::NAN,
                });
            rows.push(AblationRow {
                seed,
                ablation: a,
                coverage: lv.coverage,
                deviation: (lv.coverage - spec.tau).abs(),
                sharpness: lv.sharpness,
                report,
            });
        }
        Ok(rows)
    })?;
    let rows: Vec<AblationRow> = per_seed.into_iter().flatten().collect();
    let summary = spec
        .ablations
        .iter()
        .map(|&a| {
            let m = |f: &dyn Fn(&AblationRow) -> f64| median_of(&rows, |r| r.ablation == a, f);
            AblationSummary {
                ablation: a,
                median_coverage: m(&|r| r.coverage),
                median_deviation: m(&|r| r.deviation),
                median_sharpness: m(&|r| r.sharpness),
                median_ece: m(&|r| r.report.ece),
                median_spearman: m(&|r| r.report.spearman.unwrap_or(f64::NAN)),
            }
        })
        .collect();
    Ok(CalibrationReport {
        tau: spec.tau,
        score_mode: spec.score_mode,
        summary,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub seed: u64,
    pub full_coverage: f64,
    pub vanilla_coverage: f64,
    /// Mean width on ordered (stable) test nodes.
    pub full_stable_width: f64,
    pub vanilla_stable_width: f64,
    pub full_disordered_width: f64,
    pub vanilla_disordered_width: f64,
    pub width_ratio: f64,
    pub ci_half_width: f64,
    /// Both arms within the binomial interval of `tau`.
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub tau: f64,
    pub eta: f64,
    pub full_mode: ScoreMode,
    pub vanilla_mode: ScoreMode,
    pub median_width_ratio: f64,
    pub median_full_coverage: f64,
    pub median_vanilla_coverage: f64,
    pub ci_half_width: f64,
    /// Set when either arm's median coverage falls outside the interval.
    pub inconclusive: bool,
    pub rows: Vec<EfficiencyRow>,
}

/// Stable-region width of the full method (recipe score mode) against an
/// unregularized head with absolute scores.
pub fn run_efficiency_experiment(spec: &ExperimentSpec) -> Result<EfficiencyReport> {
    spec.validate()?;
    let rows = fan_out(&spec.seeds, |seed| {
        let (ds, base) = source_data(spec, seed)?;
        let full = fit(&base, &ds, &spec.levels, Some(spec.score_mode))?;
        let vanilla_cfg = crate::trainer::TrainConfig {
            objective: vanilla_objective(&base.objective),
            ..base.clone()
        };
        let vanilla = fit(&vanilla_cfg, &ds, &spec.levels, Some(ScoreMode::Absolute))?;
        let test = ds.nodes_in(Split::Test);
        let y: Vec<f64> = test.iter().map(|&i| ds.nodes[i].target_y).collect();
        let stats = |f: &Fitted| -> Result<(f64, f64, f64)> {
            let p: Vec<_> = test.iter().map(|&i| f.preds[i]).collect();
            let iv = f
                .calib
                .as_ref()
                .expect("calibrated")
                .intervals_at(&p, spec.tau)?;
            let cov = crate::metrics::coverage(&iv, &y)?;
            let width_where = |flag: bool| {
                let w: Vec<f64> = test
                    .iter()
                    .zip(&iv)
                    .filter(|(&i, _)| ds.nodes[i].disorder_flag == flag)
                    .map(|(_, v)| v.width())
                    .collect();
                if w.is_empty() {
                    f64::NAN
                } else {
                    mean(&w)
                }
            };
            Ok((cov, width_where(false), width_where(true)))
        };
        let (fc, fs, fd) = stats(&full)?;
        let (vc, vs, vd) = stats(&vanilla)?;
        let ci = binomial_half_width(spec.tau, test.len());
        Ok(EfficiencyRow {
            seed,
            full_coverage: fc,
            vanilla_coverage: vc,
            full_stable_width: fs,
            vanilla_stable_width: vs,
            full_disordered_width: fd,
            vanilla_disordered_width: vd,
            width_ratio: fs / vs,
            ci_half_width: ci,
            matched: (fc - spec.tau).abs() <= ci && (vc - spec.tau).abs() <= ci,
        })
    })?;
    let all = |_: &EfficiencyRow| true;
    let median_full_coverage = median_of(&rows, all, |r| r.full_coverage);
    let median_vanilla_coverage = median_of(&rows, all, |r| r.vanilla_coverage);
    let ci_half_width = median_of(&rows, all, |r| r.ci_half_width);
    Ok(EfficiencyReport {
        tau: spec.tau,
        eta: spec.generator.informativeness_eta,
        full_mode: spec.score_mode,
        vanilla_mode: ScoreMode::Absolute,
        median_width_ratio: median_of(&rows, all, |r| r.width_ratio),
        median_full_coverage,
        median_vanilla_coverage,
        ci_half_width,
        inconclusive: (median_full_coverage - spec.tau).abs() > ci_half_width
            || (median_vanilla_coverage - spec.tau).abs() > ci_half_width,
        rows,
    })
}
