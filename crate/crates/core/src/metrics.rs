//! Coverage, calibration error, sharpness and group-conditional reporting.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::conformal::{gaussian_intervals, ConformalCalibration, Interval, DEFAULT_LEVELS};
use crate::data::{Dataset, Segment};
use crate::error::{Error, Result};
use crate::head::NigParams;
use crate::numerics::spearman;

/// Nominal levels 0.50, 0.55, ..., 0.95.
pub fn default_grid() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

pub const ACE_LEVEL: f64 = 0.9;
pub const DEFAULT_ACE_BINS: usize = 10;

pub fn coverage(intervals: &[Interval], y: &[f64]) -> Result<f64> {
    if intervals.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} intervals for {} targets",
            intervals.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Empty("coverage input"));
    }
    Ok(intervals
        .iter()
        .zip(y)
        .filter(|(iv, &t)| iv.covers(t))
        .count() as f64
        / y.len() as f64)
}

pub fn sharpness(intervals: &[Interval]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::Empty("sharpness input"));
    }
    Ok(intervals.iter().map(Interval::width).sum::<f64>() / intervals.len() as f64)
}

/// Mean absolute gap between empirical and nominal coverage.
pub fn ece_from_curve(curve: &[(f64, f64)]) -> f64 {
    curve.iter().map(|(t, c)| (c - t).abs()).sum::<f64>() / curve.len() as f64
}

/// How intervals are produced at a given level.
#[derive(Debug, Clone, Copy)]
pub enum IntervalMethod<'a> {
    Conformal(&'a ConformalCalibration),
    /// `mu ± z sqrt(Var)` with no calibration step.
    Gaussian,
}

impl IntervalMethod<'_> {
    pub fn intervals(&self, preds: &[NigParams], tau: f64) -> Result<Vec<Interval>> {
        match self {
            IntervalMethod::Conformal(c) => c.intervals_at(preds, tau),
            IntervalMethod::Gaussian => gaussian_intervals(preds, tau),
        }
    }
}

pub fn calibration_curve(
    method: IntervalMethod,
    preds: &[NigParams],
    y: &[f64],
    grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&t| Ok((t, coverage(&method.intervals(preds, t)?, y)?)))
        .collect()
}

pub fn ece(method: IntervalMethod, preds: &[NigParams], y: &[f64], grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Empty("ECE level grid"));
    }
    Ok(ece_from_curve(&calibration_curve(method, preds, y, grid)?))
}

/// Sorts by `key` (ties by index) and cuts into `n_bins` equal-mass bins.
pub fn equal_mass_bins(key: &[f64], n_bins: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..key.len()).collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    let n = key.len();
    (0..n_bins)
        .map(|k| order[k * n / n_bins..(k + 1) * n / n_bins].to_vec())
        .collect()
}

/// Unweighted mean over variance bins of `|coverage - tau|`.
pub fn ace_binned(
    intervals: &[Interval],
    variances: &[f64],
    y: &[f64],
    n_bins: usize,
    tau: f64,
) -> Result<f64> {
    if n_bins == 0 || y.len() < n_bins {
        return Err(Error::Domain(format!(
            "{} nodes cannot fill {n_bins} bins",
            y.len()
        )));
    }
    if intervals.len() != y.len() || variances.len() != y.len() {
        return Err(Error::Dimension("ACE inputs must be aligned".into()));
    }
    let mut total = 0.0;
    for bin in equal_mass_bins(variances, n_bins) {
        let covered = bin.iter().filter(|&&i| intervals[i].covers(y[i])).count();
        total += (covered as f64 / bin.len() as f64 - tau).abs();
    }
    Ok(total / n_bins as f64)
}

pub fn ace(method: IntervalMethod, preds: &[NigParams], y: &[f64], n_bins: usize) -> Result<f64> {
    let iv = method.intervals(preds, ACE_LEVEL)?;
    let var: Vec<f64> = preds.iter().map(NigParams::predictive_variance).collect();
    ace_binned(&iv, &var, y, n_bins, ACE_LEVEL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub name: String,
    pub count: usize,
    /// `None` for empty groups.
    pub coverage: Option<f64>,
    pub ece: Option<f64>,
    pub mean_width: Option<f64>,
}

/// Conditional coverage at `tau` and per-group ECE over `grid`.
///
/// `grid_intervals[k]` holds the intervals at `grid[k]`; `tau` must be on the grid.
pub fn group_report(
    grid: &[f64],
    grid_intervals: &[Vec<Interval>],
    y: &[f64],
    tags: &[usize],
    names: &[String],
    tau: f64,
) -> Result<Vec<GroupStats>> {
    if grid.len() != grid_intervals.len()
        || grid_intervals.iter().any(|iv| iv.len() != y.len())
        || tags.len() != y.len()
    {
        return Err(Error::Dimension(
            "group report inputs must be aligned".into(),
        ));
    }
    let k_tau = grid
        .iter()
        .position(|t| (t - tau).abs() < 1e-9)
        .ok_or_else(|| Error::Domain(format!("level {tau} is not on the grid")))?;
    if let Some(bad) = tags.iter().find(|&&t| t >= names.len()) {
        return Err(Error::Domain(format!("group tag {bad} has no name")));
    }
    let mut members = vec![Vec::new(); names.len()];
    for (i, &t) in tags.iter().enumerate() {
        members[t].push(i);
    }
    Ok(names
        .iter()
        .zip(&members)
        .map(|(name, idx)| {
            if idx.is_empty() {
                return GroupStats {
                    name: name.clone(),
                    count: 0,
                    coverage: None,
                    ece: None,
                    mean_width: None,
                };
            }
            let cov_at = |k: usize| {
                idx.iter()
                    .filter(|&&i| grid_intervals[k][i].covers(y[i]))
                    .count() as f64
                    / idx.len() as f64
            };
            let curve: Vec<(f64, f64)> = grid
                .iter()
                .enumerate()
                .map(|(k, &t)| (t, cov_at(k)))
                .collect();
            let width = idx
                .iter()
                .map(|&i| grid_intervals[k_tau][i].width())
                .sum::<f64>()
                / idx.len() as f64;
            GroupStats {
                name: name.clone(),
                count: idx.len(),
                coverage: Some(cov_at(k_tau)),
                ece: Some(ece_from_curve(&curve)),
                mean_width: Some(width),
            }
        })
        .collect())
}

/// Quartile index `floor(4 * #{strictly smaller priors} / n)`; tied priors share a quartile.
pub fn disorder_quartiles(priors: &[f64]) -> Vec<usize> {
    let n = priors.len();
    let mut sorted = priors.to_vec();
    sorted.sort_by(f64::total_cmp);
    priors
        .iter()
        .map(|b| {
            let smaller = sorted.partition_point(|v| v < b);
            (4 * smaller / n).min(3)
        })
        .collect()
}

pub fn quartile_names() -> Vec<String> {
    (1..=4).map(|q| format!("disorder_q{q}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: f64,
    pub coverage: f64,
    pub sharpness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub n_test: usize,
    pub levels: Vec<LevelStats>,
    pub ece: f64,
    pub ace: f64,
    /// Spearman correlation of predicted variance with absolute error.
    pub spearman: Option<f64>,
    pub calibration_curve: Vec<(f64, f64)>,
    pub segments: Vec<GroupStats>,
    pub disorder: Vec<GroupStats>,
    pub quartiles: Vec<GroupStats>,
}

impl MetricsReport {
    pub fn level(&self, tau: f64) -> Option<&LevelStats> {
        self.levels.iter().find(|l| (l.level - tau).abs() < 1e-9)
    }

    pub fn group(&self, name: &str) -> Option<&GroupStats> {
        self.segments
            .iter()
            .chain(&self.disorder)
            .chain(&self.quartiles)
            .find(|g| g.name == name)
    }
}

/// Full report on the nodes listed in `nodes`; `preds` covers the whole dataset.
pub fn evaluate(
    method: IntervalMethod,
    preds: &[NigParams],
    ds: &Dataset,
    nodes: &[usize],
) -> Result<MetricsReport> {
    if preds.len() != ds.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} nodes",
            preds.len(),
            ds.len()
        )));
    }
    if nodes.is_empty() {
        return Err(Error::Empty("evaluation nodes"));
    }
    let p: Vec<NigParams> = nodes.iter().map(|&i| preds[i]).collect();
    let y: Vec<f64> = nodes.iter().map(|&i| ds.nodes[i].target_y).collect();
    let mut levels = Vec::new();
    for &t in &DEFAULT_LEVELS {
        let iv = method.intervals(&p, t)?;
        levels.push(LevelStats {
            level: t,
            coverage: coverage(&iv, &y)?,
            sharpness: sharpness(&iv)?,
        });
    }
    let grid = default_grid();
    let grid_iv = grid
        .iter()
        .map(|&t| method.intervals(&p, t))
        .collect::<Result<Vec<_>>>()?;
    let curve: Vec<(f64, f64)> = grid
        .iter()
        .zip(&grid_iv)
        .map(|(&t, iv)| Ok((t, coverage(iv, &y)?)))
        .collect::<Result<_>>()?;
    let var: Vec<f64> = p.iter().map(NigParams::predictive_variance).collect();
    let abs_err: Vec<f64> = p.iter().zip(&y).map(|(q, t)| (t - q.mu).abs()).collect();
    let bins = DEFAULT_ACE_BINS.min(y.len());
    let ace = ace_binned(&method.intervals(&p, ACE_LEVEL)?, &var, &y, bins, ACE_LEVEL)?;

    let seg_tags: Vec<usize> = nodes
        .iter()
        .map(|&i| ds.nodes[i].group_tag.index())
        .collect();
    let seg_names: Vec<String> = Segment::ALL.iter().map(|s| s.name().to_string()).collect();
    let dis_tags: Vec<usize> = nodes
        .iter()
        .map(|&i| usize::from(ds.nodes[i].disorder_flag))
        .collect();
    let dis_names = vec!["ordered".to_string(), "disordered".to_string()];
    let priors: Vec<f64> = nodes.iter().map(|&i| ds.nodes[i].prior_b).collect();
    let q_tags = disorder_quartiles(&priors);

    let report_groups = |tags: &[usize], names: &[String]| {
        group_report(&grid, &grid_iv, &y, tags, names, ACE_LEVEL)
    };
    let method_name = match method {
        IntervalMethod::Conformal(c) => format!("conformal_{}", c.score_mode.name()),
        IntervalMethod::Gaussian => "gaussian".to_string(),
    };
    Ok(MetricsReport {
        method: method_name,
        n_test: nodes.len(),
        levels,
        ece: ece_from_curve(&curve),
        ace,
        spearman: spearman(&var, &abs_err)?,
        calibration_curve: curve,
        segments: report_groups(&seg_tags, &seg_names)?,
        disorder: report_groups(&dis_tags, &dis_names)?,
        quartiles: report_groups(&q_tags, &quartile_names())?,
    })
}

/// `level,coverage` rows of a calibration curve.
pub fn write_curve_csv(curve: &[(f64, f64)], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "level,coverage")?;
    for (t, c) in curve {
        writeln!(w, "{t},{c}")?;
    }
    Ok(())
}
