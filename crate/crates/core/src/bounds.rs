//! Shift-robust coverage bounds: PAC-Bayes KL surrogate, local Lipschitz
//! estimate of the score, and the worst-case coverage formula.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::conformal::{ConformalCalibration, ScoreMode};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::head::NigParams;
use crate::metrics::coverage;
use crate::numerics::RngStream;

pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_SIGMA_P: f64 = 1.0;
pub const DEFAULT_K_NEIGHBORS: usize = 5;
pub const DEFAULT_NCAL_SIZES: [usize; 5] = [250, 500, 1000, 2000, 4000];
pub const METRIC_DESCRIPTION: &str =
    "Euclidean distance on (features, target) standardized by calibration mean and standard deviation";
pub const EPSILON_PROXY: &str =
    "mean standardized (features, target) displacement of test nodes between reference and shifted data";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSurrogate {
    pub center: Vec<f64>,
    pub sigma: f64,
    pub sigma_p: f64,
}

/// `sum_i ln(sp/s) + (s^2 + w_i^2)/(2 sp^2) - 1/2` for isotropic Gaussians.
pub fn kl_gaussian(s: &PosteriorSurrogate) -> Result<f64> {
    if !(s.sigma > 0.0 && s.sigma_p > 0.0) {
        return Err(Error::Domain(format!(
            "scales must be positive, got sigma={} sigma_p={}",
            s.sigma, s.sigma_p
        )));
    }
    let sq: f64 = s.center.iter().map(|w| w * w).sum();
    Ok(kl_parts(sq, s.center.len(), s.sigma, s.sigma_p))
}

fn kl_parts(center_sq: f64, d: usize, sigma: f64, sigma_p: f64) -> f64 {
    let per = (sigma_p / sigma).ln() + sigma * sigma / (2.0 * sigma_p * sigma_p) - 0.5;
    // clamp rounding noise at the optimum sigma = sigma_p
    (d as f64 * per + center_sq / (2.0 * sigma_p * sigma_p)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    /// Clamped to `[0, 1 - alpha]`.
    pub value: f64,
    pub raw: f64,
    pub vacuous: bool,
}

/// `1 - alpha - sqrt((KL + ln(1/delta)) / (2 n)) - L eps`.
pub fn coverage_lower_bound(
    alpha: f64,
    kl: f64,
    delta: f64,
    n_cal: usize,
    lipschitz: f64,
    eps: f64,
) -> Result<BoundValue> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if n_cal == 0 {
        return Err(Error::Domain("n_cal must be positive".into()));
    }
    if !(kl >= 0.0 && lipschitz >= 0.0 && eps >= 0.0) {
        return Err(Error::Domain(
            "kl, lipschitz and eps must be nonnegative".into(),
        ));
    }
    let raw =
        1.0 - alpha - ((kl + (1.0 / delta).ln()) / (2.0 * n_cal as f64)).sqrt() - lipschitz * eps;
    Ok(BoundValue {
        value: raw.clamp(0.0, 1.0 - alpha),
        raw,
        vacuous: raw <= 0.0,
    })
}

/// Smallest `n` with complexity term at most `target - L eps`.
pub fn required_ncal(target: f64, eps: f64, lipschitz: f64, kl: f64, delta: f64) -> Result<u64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let slack = target - lipschitz * eps;
    if !(slack > 0.0) {
        return Err(Error::Infeasible(format!(
            "target degradation {target} does not exceed the shift penalty {}",
            lipschitz * eps
        )));
    }
    let n = (kl + (1.0 / delta).ln()) / (2.0 * slack * slack);
    // guard against 799.9999999 style rounding
    Ok((n - 1e-9).ceil().max(1.0) as u64)
}

/// `count` log-spaced scales from `sigma_p * 1e-3` to `sigma_p`.
pub fn default_sigma_grid(sigma_p: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![sigma_p];
    }
    (0..count)
        .map(|i| sigma_p * 10f64.powf(-3.0 + 3.0 * i as f64 / (count - 1) as f64))
        .collect()
}

/// Scale on `grid` maximizing the bound at `eps = 0`; returns `(sigma, kl)`.
pub fn choose_posterior_scale(
    center: &[f64],
    sigma_p: f64,
    alpha: f64,
    n_cal: usize,
    delta: f64,
    grid: &[f64],
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::Empty("posterior scale grid"));
    }
    let sq: f64 = center.iter().map(|w| w * w).sum();
    let mut best: Option<(f64, f64, f64)> = None;
    for &sigma in grid {
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("grid scale {sigma} is not positive")));
        }
        let kl = kl_parts(sq, center.len(), sigma, sigma_p);
        let b = coverage_lower_bound(alpha, kl, delta, n_cal, 0.0, 0.0)?.raw;
        if best.is_none_or(|(v, _, _)| b > v) {
            best = Some((b, sigma, kl));
        }
    }
    let (_, sigma, kl) = best.expect("non-empty grid");
    Ok((sigma, kl))
}

/// Per-coordinate affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        let d = points
            .first()
            .map(Vec::len)
            .ok_or(Error::Empty("standardizer input"))?;
        let n = points.len() as f64;
        let mut mean = vec![0.0; d];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; d];
        for p in points {
            for ((s, v), m) in scale.iter_mut().zip(p).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        // constant coordinates are left unscaled
        let scale = scale
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Max of `|s_i - s_j| / d_ij` over each point's `k` nearest nonzero-distance neighbors.
pub fn estimate_lipschitz(points: &[Vec<f64>], scores: &[f64], k: usize) -> Result<f64> {
    if points.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "{} points for {} scores",
            points.len(),
            scores.len()
        )));
    }
    if k == 0 || points.len() < k + 1 {
        return Err(Error::Domain(format!(
            "need at least {} points for k = {k}",
            k + 1
        )));
    }
    let mut best: Option<f64> = None;
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        cand.clear();
        cand.extend(
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| (dist(p, q), j))
                .filter(|(d, _)| *d > 0.0),
        );
        let take = k.min(cand.len());
        if take == 0 {
            continue;
        }
        if take < cand.len() {
            cand.select_nth_unstable_by(take - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        for &(d, j) in &cand[..take] {
            let slope = (scores[i] - scores[j]).abs() / d;
            best = Some(best.map_or(slope, |b: f64| b.max(slope)));
        }
    }
    best.ok_or_else(|| Error::Domain("all neighbor pairs are at zero distance".into()))
}

/// `features ⊕ target` of each listed node.
pub fn feature_target_points(ds: &Dataset, nodes: &[usize]) -> Vec<Vec<f64>> {
    nodes
        .iter()
        .map(|&i| {
            let n = &ds.nodes[i];
            let mut v = n.features.clone();
            v.push(n.target_y);
            v
        })
        .collect()
}

/// Mean standardized displacement of `nodes` between two aligned datasets.
pub fn displacement(
    reference: &Dataset,
    shifted: &Dataset,
    nodes: &[usize],
    st: &Standardizer,
) -> Result<f64> {
    if reference.len() != shifted.len() {
        return Err(Error::Dimension(
            "reference and shifted data must be node-aligned".into(),
        ));
    }
    if nodes.is_empty() {
        return Err(Error::Empty("displacement nodes"));
    }
    let a = feature_target_points(reference, nodes);
    let b = feature_target_points(shifted, nodes);
    Ok(a.iter()
        .zip(&b)
        .map(|(p, q)| dist(&st.apply(p), &st.apply(q)))
        .sum::<f64>()
        / nodes.len() as f64)
}

/// Lipschitz constant of the calibration scores in standardized space.
pub fn lipschitz_on_nodes(
    ds: &Dataset,
    nodes: &[usize],
    preds: &[NigParams],
    mode: ScoreMode,
    k: usize,
) -> Result<(f64, Standardizer)> {
    let raw = feature_target_points(ds, nodes);
    let st = Standardizer::fit(&raw)?;
    let pts: Vec<Vec<f64>> = raw.iter().map(|p| st.apply(p)).collect();
    let scores: Vec<f64> = nodes
        .iter()
        .map(|&i| mode.score(&preds[i], ds.nodes[i].target_y))
        .collect();
    Ok((estimate_lipschitz(&pts, &scores, k)?, st))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSettings {
    pub tau: f64,
    pub delta: f64,
    pub sigma_p: f64,
    pub k_neighbors: usize,
    pub sigma_grid_size: usize,
}

impl Default for BoundSettings {
    fn default() -> Self {
        BoundSettings {
            tau: 0.9,
            delta: DEFAULT_DELTA,
            sigma_p: DEFAULT_SIGMA_P,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            sigma_grid_size: 31,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftCondition {
    pub label: String,
    pub magnitude: f64,
    pub epsilon: f64,
    pub bound: BoundValue,
    pub empirical: f64,
    pub conservative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub tau: f64,
    pub delta: f64,
    pub n_cal: usize,
    pub n_weights: usize,
    pub sigma: f64,
    pub sigma_p: f64,
    pub kl: f64,
    pub lipschitz: f64,
    pub metric: String,
    pub epsilon_proxy: String,
    pub conditions: Vec<ShiftCondition>,
    /// Empirical coverage uses the point model; the KL term uses the Gaussian surrogate around it.
    pub note: String,
}

/// Inputs shared by the sweep operations.
pub struct SweepContext<'a> {
    pub weights: &'a [f64],
    pub calib: &'a ConformalCalibration,
    /// Reference dataset the calibration came from.
    pub reference: &'a Dataset,
    pub reference_preds: &'a [NigParams],
    pub cal_nodes: &'a [usize],
    pub test_nodes: &'a [usize],
}

/// A shifted copy of the reference data with the model's predictions on it.
pub struct Shifted<'a> {
    pub label: String,
    pub magnitude: f64,
    pub data: &'a Dataset,
    pub preds: &'a [NigParams],
}

fn empirical_coverage(
    calib: &ConformalCalibration,
    preds: &[NigParams],
    ds: &Dataset,
    nodes: &[usize],
    tau: f64,
) -> Result<f64> {
    let p: Vec<NigParams> = nodes.iter().map(|&i| preds[i]).collect();
    let y: Vec<f64> = nodes.iter().map(|&i| ds.nodes[i].target_y).collect();
    coverage(&calib.intervals_at(&p, tau)?, &y)
}

/// Bound and empirical coverage for each shift condition.
pub fn bound_vs_empirical_sweep(
    ctx: &SweepContext,
    series: &[Shifted],
    settings: &BoundSettings,
) -> Result<BoundReport> {
    if series.is_empty() {
        return Err(Error::Empty("shift series"));
    }
    let alpha = 1.0 - settings.tau;
    let n_cal = ctx.calib.n_cal;
    let grid = default_sigma_grid(settings.sigma_p, settings.sigma_grid_size);
    let (sigma, kl) = choose_posterior_scale(
        ctx.weights,
        settings.sigma_p,
        alpha,
        n_cal,
        settings.delta,
        &grid,
    )?;
    let (ls, st) = lipschitz_on_nodes(
        ctx.reference,
        ctx.cal_nodes,
        ctx.reference_preds,
        ctx.calib.score_mode,
        settings.k_neighbors,
    )?;
    let mut conditions = Vec::with_capacity(series.len());
    for s in series {
        let eps = displacement(ctx.reference, s.data, ctx.test_nodes, &st)?;
        let bound = coverage_lower_bound(alpha, kl, settings.delta, n_cal, ls, eps)?;
        let empirical =
            empirical_coverage(ctx.calib, s.preds, s.data, ctx.test_nodes, settings.tau)?;
        conditions.push(ShiftCondition {
            label: s.label.clone(),
            magnitude: s.magnitude,
            epsilon: eps,
            bound,
            empirical,
            conservative: bound.value <= empirical,
        });
    }
    Ok(BoundReport {
        tau: settings.tau,
        delta: settings.delta,
        n_cal,
        n_weights: ctx.weights.len(),
        sigma,
        sigma_p: settings.sigma_p,
        kl,
        lipschitz: ls,
        metric: METRIC_DESCRIPTION.into(),
        epsilon_proxy: EPSILON_PROXY.into(),
        conditions,
        note: "empirical coverage is measured with the trained point model; KL uses an isotropic Gaussian surrogate centered on its weights".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcalRow {
    pub n_cal: usize,
    pub bound: BoundValue,
    pub empirical: f64,
    /// `|raw bound - empirical|`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcalSweep {
    pub tau: f64,
    pub kl: f64,
    pub sigma: f64,
    pub lipschitz: f64,
    pub epsilon: f64,
    pub rows: Vec<NcalRow>,
}

/// Calibrates on nested random subsets of `pool_nodes` and evaluates on one shifted condition.
#[allow(clippy::too_many_arguments)]
pub fn ncal_sweep(
    weights: &[f64],
    pool: &Dataset,
    pool_preds: &[NigParams],
    pool_nodes: &[usize],
    shifted: &Shifted,
    reference: &Dataset,
    test_nodes: &[usize],
    sizes: &[usize],
    mode: ScoreMode,
    settings: &BoundSettings,
    seed: u64,
) -> Result<NcalSweep> {
    if sizes.is_empty() {
        return Err(Error::Empty("n_cal sizes"));
    }
    let largest = *sizes.iter().max().expect("non-empty");
    if largest > pool_nodes.len() {
        return Err(Error::Domain(format!(
            "pool of {} nodes cannot supply n_cal = {largest}",
            pool_nodes.len()
        )));
    }
    let alpha = 1.0 - settings.tau;
    let (ls, st) = lipschitz_on_nodes(pool, pool_nodes, pool_preds, mode, settings.k_neighbors)?;
    let eps = displacement(reference, shifted.data, test_nodes, &st)?;
    let mut order = pool_nodes.to_vec();
    order.shuffle(&mut RngStream::new(seed, 0x6e63_616c).rng());
    let grid = default_sigma_grid(settings.sigma_p, settings.sigma_grid_size);
    let mut rows = Vec::with_capacity(sizes.len());
    let mut kl_out = 0.0;
    let mut sigma_out = settings.sigma_p;
    for &n in sizes {
        let subset = &order[..n];
        let scores = subset
            .iter()
            .map(|&i| mode.score(&pool_preds[i], pool.nodes[i].target_y))
            .collect();
        let calib = ConformalCalibration::from_scores(scores, &[settings.tau], mode)?;
        let (sigma, kl) =
            choose_posterior_scale(weights, settings.sigma_p, alpha, n, settings.delta, &grid)?;
        kl_out = kl;
        sigma_out = sigma;
        let bound = coverage_lower_bound(alpha, kl, settings.delta, n, ls, eps)?;
        let empirical = empirical_coverage(
            &calib,
            shifted.preds,
            shifted.data,
            test_nodes,
            settings.tau,
        )?;
        rows.push(NcalRow {
            n_cal: n,
            bound,
            empirical,
            gap: (bound.raw - empirical).abs(),
        });
    }
    Ok(NcalSweep {
        tau: settings.tau,
        kl: kl_out,
        sigma: sigma_out,
        lipschitz: ls,
        epsilon: eps,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kl_examples() {
        let s = |center: Vec<f64>, sigma: f64| PosteriorSurrogate {
            center,
            sigma,
            sigma_p: 1.0,
        };
        assert_eq!(kl_gaussian(&s(vec![0.0; 4], 1.0)).unwrap(), 0.0);
        assert!((kl_gaussian(&s(vec![1.0], 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let d = 7.0;
        let got = kl_gaussian(&s(vec![0.0; 7], 0.5)).unwrap();
        assert!((got - d * 0.318_147_180_559_945_3).abs() < 1e-12);
        assert!(kl_gaussian(&s(vec![0.0], 0.0)).is_err());
    }

    #[test]
    fn bound_examples() {
        let b = coverage_lower_bound(0.1, 0.0, 0.05, 1000, 3.0, 0.0).unwrap();
        assert!((b.value - 0.861_297_724_4).abs() < 1e-9);
        assert!(!b.vacuous);
        let limit = coverage_lower_bound(0.1, 0.0, 0.05, usize::MAX, 0.0, 0.0).unwrap();
        assert!((limit.value - 0.9).abs() < 1e-9);
        let a = coverage_lower_bound(0.1, 2.0, 0.05, 300, 1.5, 0.01).unwrap();
        let c = coverage_lower_bound(0.1, 2.0, 0.05, 300, 1.5, 0.02).unwrap();
        assert!(c.raw < a.raw);
        let v = coverage_lower_bound(0.1, 2.0, 0.05, 300, 100.0, 1.0).unwrap();
        assert!(v.vacuous && v.value == 0.0);
        assert!(coverage_lower_bound(0.1, 0.0, 1.0, 10, 0.0, 0.0).is_err());
    }

    #[test]
    fn required_ncal_examples() {
        // kl + ln(1/delta) = 4 with delta = 0.05
        let kl = 4.0 - 20f64.ln();
        assert_eq!(required_ncal(0.05, 0.0, 0.0, kl, 0.05).unwrap(), 800);
        assert_eq!(required_ncal(0.15, 0.5, 0.2, kl, 0.05).unwrap(), 800);
        assert!(matches!(
            required_ncal(0.1, 0.5, 0.2, kl, 0.05),
            Err(Error::Infeasible(_))
        ));
        let wide = required_ncal(0.1, 0.0, 0.0, kl, 0.05).unwrap();
        assert_eq!(wide, 200);
    }

    #[test]
    fn posterior_scale_choice() {
        let grid = default_sigma_grid(1.0, 31);
        let (s, kl) = choose_posterior_scale(&[0.0; 10], 1.0, 0.1, 500, 0.05, &grid).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(kl, 0.0);
        let (_, kl_big) = choose_posterior_scale(&[0.5; 10], 1.0, 0.1, 500, 0.05, &grid).unwrap();
        let (_, kl_bigger) =
            choose_posterior_scale(&[0.9; 10], 1.0, 0.1, 500, 0.05, &grid).unwrap();
        assert!(kl_bigger > kl_big && kl_big > 0.0);
        assert_eq!(
            choose_posterior_scale(&[0.3], 1.0, 0.1, 500, 0.05, &[0.2])
                .unwrap()
                .0,
            0.2
        );
        assert!(choose_posterior_scale(&[0.3], 1.0, 0.1, 500, 0.05, &[]).is_err());
    }

    #[test]
    fn lipschitz_examples() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 10.0]).collect();
        assert_eq!(estimate_lipschitz(&pts, &[1.5; 50], 5).unwrap(), 0.0);
        let slope: Vec<f64> = pts.iter().map(|p| 2.0 * p[0]).collect();
        let ls = estimate_lipschitz(&pts, &slope, 5).unwrap();
        assert!((ls - 2.0).abs() < 0.1);
        let mut dup = pts.clone();
        dup.extend(pts.clone());
        let mut dup_s = slope.clone();
        dup_s.extend(slope.clone());
        assert!((estimate_lipschitz(&dup, &dup_s, 5).unwrap() - ls).abs() < 1e-12);
        assert!(estimate_lipschitz(&vec![vec![1.0]; 10], &[0.0; 10], 3).is_err());
        assert!(estimate_lipschitz(&pts[..3], &slope[..3], 5).is_err());
    }

    proptest! {
        #[test]
        fn lipschitz_scale_covariant(seed in 0u64..1000, c in 0.1f64..10.0) {
            use rand::Rng;
            let mut rng = RngStream::new(seed, 0).rng();
            let pts: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
            let s: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..2.0)).collect();
            let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
            let a = estimate_lipschitz(&pts, &s, 5).unwrap();
            let b = estimate_lipschitz(&pts, &scaled, 5).unwrap();
            prop_assert!((b - c * a).abs() <= 1e-9 * b.abs().max(1.0));
        }

        #[test]
        fn kl_nonnegative(sigma in 0.01f64..5.0, w in proptest::collection::vec(-3.0f64..3.0, 1..20)) {
            let kl = kl_gaussian(&PosteriorSurrogate { center: w, sigma, sigma_p: 1.0 }).unwrap();
            prop_assert!(kl >= 0.0);
        }

        #[test]
        fn bound_monotone(n in 1usize..100_000, e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let a = coverage_lower_bound(0.1, 3.0, 0.05, n, 0.7, lo).unwrap();
            let b = coverage_lower_bound(0.1, 3.0, 0.05, n, 0.7, hi).unwrap();
            prop_assert!(b.value <= a.value && a.value <= 0.9);
            let more = coverage_lower_bound(0.1, 3.0, 0.05, n + 1, 0.7, lo).unwrap();
            prop_assert!(more.raw > a.raw);
        }
    }
}
