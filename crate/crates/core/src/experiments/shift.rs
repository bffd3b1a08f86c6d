use serde::{Deserialize, Serialize};

use super::{
    binomial_half_width, fan_out, fit, median_of, perturb_seed, source_data, Ablation,
    ExperimentSpec,
};
use crate::conformal::ScoreMode;
use crate::data::{perturb, Dataset, PerturbationKind, Split};
use crate::error::Result;
use crate::head::NigParams;
use crate::metrics::{coverage, sharpness};
use crate::numerics::spearman;

const SHIFT_ARMS: [Ablation; 2] = [Ablation::Full, Ablation::NoPriors];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub seed: u64,
    pub ablation: Ablation,
    pub magnitude: f64,
    pub coverage: f64,
    /// `tau - coverage`.
    pub degradation: f64,
    pub sharpness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub ablation: Ablation,
    pub magnitude: f64,
    pub median_coverage: f64,
    pub median_degradation: f64,
    pub median_sharpness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub tau: f64,
    pub kind: PerturbationKind,
    pub score_mode: ScoreMode,
    /// Conditions are labelled by the generator delta applied to the test data.
    pub condition_label: String,
    pub ci_half_width: f64,
    pub summary: Vec<ShiftSummary>,
    pub rows: Vec<ShiftRow>,
}

impl ShiftReport {
    pub fn summary_of(&self, a: Ablation, magnitude: f64) -> Option<&ShiftSummary> {
        self.summary
            .iter()
            .find(|s| s.ablation == a && s.magnitude == magnitude)
    }
}

/// Perturbed copy of `ds`, or a clone when `magnitude` is zero.
pub(crate) fn shifted(
    ds: &Dataset,
    kind: PerturbationKind,
    magnitude: f64,
    seed: u64,
) -> Result<Dataset> {
    if magnitude == 0.0 {
        Ok(ds.clone())
    } else {
        perturb(ds, kind, magnitude, seed)
    }
}

/// Calibrates on clean data and measures test coverage under increasing shift.
pub fn run_shift_experiment(spec: &ExperimentSpec) -> Result<ShiftReport> {
    spec.validate()?;
    let kind = spec.shift.kind;
    let per_seed = fan_out(&spec.seeds, |seed| {
        let (ds, base) = source_data(spec, seed)?;
        let test = ds.nodes_in(Split::Test);
        let conditions = spec
            .shift
            .magnitudes
            .iter()
            .enumerate()
            .map(|(k, &m)| shifted(&ds, kind, m, perturb_seed(seed, k as u64)))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for a in SHIFT_ARMS {
            let f = fit(
                &a.train_config(&base),
                &ds,
                &spec.levels,
                a.score_mode(spec.score_mode),
            )?;
            let calib = f.calib.as_ref().expect("conformal arm");
            for (&m, sd) in spec.shift.magnitudes.iter().zip(&conditions) {
                let preds = f.model.predict(sd)?;
                let p: Vec<NigParams> = test.iter().map(|&i| preds[i]).collect();
                let y: Vec<f64> = test.iter().map(|&i| sd.nodes[i].target_y).collect();
                let iv = calib.intervals_at(&p, spec.tau)?;
                let cov = coverage(&iv, &y)?;
                rows.push(ShiftRow {
                    seed,
                    ablation: a,
                    magnitude: m,
                    coverage: cov,
                    degradation: spec.tau - cov,
                    sharpness: sharpness(&iv)?,
                });
            }
        }
        Ok((rows, test.len()))
    })?;
    let n_test = per_seed.first().map_or(0, |(_, n)| *n);
    let rows: Vec<ShiftRow> = per_seed.into_iter().flat_map(|(r, _)| r).collect();
    let mut summary = Vec::new();
    for a in SHIFT_ARMS {
        for &m in &spec.shift.magnitudes {
            let keep = |r: &ShiftRow| r.ablation == a && r.magnitude == m;
            summary.push(ShiftSummary {
                ablation: a,
                magnitude: m,
                median_coverage: median_of(&rows, keep, |r| r.coverage),
                median_degradation: median_of(&rows, keep, |r| r.degradation),
                median_sharpness: median_of(&rows, keep, |r| r.sharpness),
            });
        }
    }
    Ok(ShiftReport {
        tau: spec.tau,
        kind,
        score_mode: spec.score_mode,
        condition_label: format!(
            "test data perturbed by {} with the listed magnitude",
            kind.name()
        ),
        ci_half_width: binomial_half_width(spec.tau, n_test),
        summary,
        rows,
    })
}

/// Spearman correlation of predicted standard deviation with absolute error on `nodes`.
pub fn uncertainty_error_correlation(
    preds: &[NigParams],
    ds: &Dataset,
    nodes: &[usize],
) -> Result<Option<f64>> {
    let sd: Vec<f64> = nodes
        .iter()
        .map(|&i| preds[i].predictive_variance().sqrt())
        .collect();
    let err: Vec<f64> = nodes
        .iter()
        .map(|&i| (ds.nodes[i].target_y - preds[i].mu).abs())
        .collect();
    spearman(&sd, &err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub seed: u64,
    pub ablation: Ablation,
    /// Perturbation name, or `overall` for all kinds pooled.
    pub kind: String,
    pub magnitude: Option<f64>,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// `(ablation, kind, median Spearman)`.
    pub summary: Vec<(Ablation, String, f64)>,
    pub rows: Vec<CorrelationRow>,
}

impl CorrelationReport {
    pub fn median(&self, a: Ablation, kind: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|(x, k, _)| *x == a && k == kind)
            .map(|s| s.2)
    }
}

pub const OVERALL: &str = "overall";

/// Uncertainty-error rank correlation on perturbed test data for the full
/// and prior-free configurations.
pub fn run_perturbation_correlation(spec: &ExperimentSpec) -> Result<CorrelationReport> {
    spec.validate()?;
    let per_seed = fan_out(&spec.seeds, |seed| {
        let (ds, base) = source_data(spec, seed)?;
        let test = ds.nodes_in(Split::Test);
        let variants = spec
            .perturbations
            .iter()
            .enumerate()
            .map(|(k, p)| perturb(&ds, p.kind, p.magnitude, perturb_seed(seed, 100 + k as u64)))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for a in SHIFT_ARMS {
            let f = fit(&a.train_config(&base), &ds, &spec.levels, None)?;
            let (mut sd_all, mut err_all) = (Vec::new(), Vec::new());
            for (p, v) in spec.perturbations.iter().zip(&variants) {
                let preds = f.model.predict(v)?;
                for &i in &test {
                    sd_all.push(preds[i].predictive_variance().sqrt());
                    err_all.push((v.nodes[i].target_y - preds[i].mu).abs());
                }
                rows.push(CorrelationRow {
                    seed,
                    ablation: a,
                    kind: p.kind.name().into(),
                    magnitude: Some(p.magnitude),
                    spearman: uncertainty_error_correlation(&preds, v, &test)?,
                });
            }
            rows.push(CorrelationRow {
                seed,
                ablation: a,
                kind: OVERALL.into(),
                magnitude: None,
                spearman: spearman(&sd_all, &err_all)?,
            });
        }
        Ok(rows)
    })?;
    let rows: Vec<CorrelationRow> = per_seed.into_iter().flatten().collect();
    let kinds: Vec<String> = spec
        .perturbations
        .iter()
        .map(|p| p.kind.name().to_string())
        .chain([OVERALL.to_string()])
        .collect();
    let mut summary = Vec::new();
    for a in SHIFT_ARMS {
        for k in &kinds {
            let m = median_of(
                &rows,
                |r| r.ablation == a && &r.kind == k,
                |r| r.spearman.unwrap_or(f64::NAN),
            );
            summary.push((a, k.clone(), m));
        }
    }
    Ok(CorrelationReport { summary, rows })
}
