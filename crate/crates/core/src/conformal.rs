//! Split-conformal calibration and interval construction.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::head::NigParams;
use crate::numerics::{conformal_quantile, normal_quantile};

pub const DEFAULT_LEVELS: [f64; 3] = [0.8, 0.9, 0.95];
pub const VARIANCE_FLOOR: f64 = 1e-8;
const LEVEL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// `|y - mu|`, constant-width intervals.
    Absolute,
    /// `|y - mu| / sqrt(Var)`, widths scale with the predicted deviation.
    #[default]
    Normalized,
}

impl ScoreMode {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMode::Absolute => "absolute",
            ScoreMode::Normalized => "normalized",
        }
    }

    /// Multiplier applied to `q` when building the interval for one node.
    pub fn scale(self, p: &NigParams) -> f64 {
        match self {
            ScoreMode::Absolute => 1.0,
            ScoreMode::Normalized => p.predictive_variance().max(VARIANCE_FLOOR).sqrt(),
        }
    }

    pub fn score(self, p: &NigParams, y: f64) -> f64 {
        (y - p.mu).abs() / self.scale(p)
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absolute" => Ok(ScoreMode::Absolute),
            "normalized" => Ok(ScoreMode::Normalized),
            other => Err(Error::config(
                "score_mode",
                format!("unknown mode `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn covers(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Score of every node in `ds` under `mode`.
pub fn nonconformity(preds: &[NigParams], ds: &Dataset, mode: ScoreMode) -> Result<Vec<f64>> {
    if preds.len() != ds.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} nodes",
            preds.len(),
            ds.len()
        )));
    }
    Ok(preds
        .iter()
        .zip(&ds.nodes)
        .map(|(p, n)| mode.score(p, n.target_y))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibration {
    pub levels: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub score_mode: ScoreMode,
    pub n_cal: usize,
    /// Retained calibration scores.
    pub scores: Vec<f64>,
}

pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Empty("coverage levels"));
    }
    if levels.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::config("levels", "every level must lie in (0, 1)"));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(
            "levels",
            "levels must be strictly increasing",
        ));
    }
    Ok(())
}

impl ConformalCalibration {
    pub fn from_scores(scores: Vec<f64>, levels: &[f64], mode: ScoreMode) -> Result<Self> {
        validate_levels(levels)?;
        if scores.is_empty() {
            return Err(Error::Empty("calibration scores"));
        }
        let quantiles = levels
            .iter()
            .map(|t| conformal_quantile(&scores, 1.0 - t))
            .collect::<Result<Vec<_>>>()?;
        Ok(ConformalCalibration {
            levels: levels.to_vec(),
            quantiles,
            score_mode: mode,
            n_cal: scores.len(),
            scores,
        })
    }

    /// Stored quantile for a calibrated level.
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        self.levels
            .iter()
            .position(|l| (l - tau).abs() < LEVEL_TOL)
            .map(|i| self.quantiles[i])
            .ok_or_else(|| Error::Domain(format!("level {tau} was not calibrated")))
    }

    /// Quantile for any level, computed from the retained scores.
    pub fn quantile_at(&self, tau: f64) -> Result<f64> {
        if let Ok(q) = self.quantile(tau) {
            return Ok(q);
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Domain(format!("level {tau} outside (0, 1)")));
        }
        conformal_quantile(&self.scores, 1.0 - tau)
    }

    pub fn intervals(&self, preds: &[NigParams], tau: f64) -> Result<Vec<Interval>> {
        Ok(intervals_with(preds, self.quantile(tau)?, self.score_mode))
    }

    /// Intervals at an arbitrary level using [`quantile_at`](Self::quantile_at).
    pub fn intervals_at(&self, preds: &[NigParams], tau: f64) -> Result<Vec<Interval>> {
        Ok(intervals_with(
            preds,
            self.quantile_at(tau)?,
            self.score_mode,
        ))
    }
}

pub fn intervals_with(preds: &[NigParams], q: f64, mode: ScoreMode) -> Vec<Interval> {
    preds
        .iter()
        .map(|p| {
            let half = q * mode.scale(p);
            Interval {
                lo: p.mu - half,
                hi: p.mu + half,
            }
        })
        .collect()
}

/// Calibrates on an explicit node subset, rejecting any training node.
pub fn calibrate_nodes(
    preds: &[NigParams],
    ds: &Dataset,
    nodes: &[usize],
    levels: &[f64],
    mode: ScoreMode,
) -> Result<ConformalCalibration> {
    if preds.len() != ds.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} nodes",
            preds.len(),
            ds.len()
        )));
    }
    let leaked = nodes
        .iter()
        .filter(|&&i| ds.splits[i] == Split::Train)
        .count();
    if leaked > 0 {
        return Err(Error::CalibrationLeak { count: leaked });
    }
    let scores = nodes
        .iter()
        .map(|&i| mode.score(&preds[i], ds.nodes[i].target_y))
        .collect();
    ConformalCalibration::from_scores(scores, levels, mode)
}

/// Calibrates on every node tagged for calibration.
pub fn calibrate(
    preds: &[NigParams],
    ds: &Dataset,
    levels: &[f64],
    mode: ScoreMode,
) -> Result<ConformalCalibration> {
    calibrate_nodes(preds, ds, &ds.nodes_in(Split::Calibration), levels, mode)
}

/// Uncalibrated Gaussian intervals `mu ± z sqrt(Var)`.
pub fn gaussian_intervals(preds: &[NigParams], tau: f64) -> Result<Vec<Interval>> {
    let z = normal_quantile(0.5 + tau / 2.0)?;
    Ok(intervals_with(preds, z, ScoreMode::Normalized))
}
