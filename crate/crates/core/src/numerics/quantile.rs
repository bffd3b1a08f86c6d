use crate::error::{Error, Result};

/// Temperature-controlled log-sum-exp soft quantile,
/// `(1/γ) ln((1/n) Σ exp(γ s_i))`, evaluated with max subtraction.
pub fn soft_quantile(scores: &[f64], gamma: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("soft_quantile scores"));
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!(
            "soft_quantile gamma must be positive, got {gamma}"
        )));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (gamma * (s - max)).exp()).sum();
    let n = scores.len() as f64;
    Ok(max + (sum / n).ln() / gamma)
}

/// Softmax weights `∂Q/∂s_i` of the soft quantile.
pub fn soft_quantile_weights(scores: &[f64], gamma: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (gamma * (s - max)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// The 1-based rank `⌈(n+1)(1−α)⌉` used by split conformal calibration.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let raw = (n as f64 + 1.0) * (1.0 - alpha);
    // absorb representation error in products such as 20 * 0.95
    (raw - 1e-9).ceil().max(1.0) as usize
}

/// Conservative split-conformal quantile: the `⌈(n+1)(1−α)⌉`-th smallest
/// score. Returns `f64::INFINITY` when that rank exceeds `n`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Empty("conformal_quantile scores"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "miscoverage must lie in (0,1), got {alpha}"
        )));
    }
    let k = conformal_rank(scores.len(), alpha);
    if k > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}
