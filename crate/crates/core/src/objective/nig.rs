use crate::head::NigParams;
use crate::numerics::{digamma_unchecked, ln_gamma};

const HALF_LN_PI: f64 = 0.572_364_942_924_700_087_071_713_675_677;

/// Per-node NIG negative log-likelihood:
/// `-1/2 ln(nu) - 1/2 ln(pi) - alpha ln(2 beta) + lnG(alpha)
///  + (alpha + 1/2) ln(nu (y - mu)^2 + 2 beta) - lnG(alpha + 1/2)`.
///
/// The value depends on `nu` and `beta` only through `beta / nu`, so it is
/// bounded below for fixed residual and the predictive variance is identified.
pub fn nig_nll(p: &NigParams, y: f64) -> f64 {
    let r = y - p.mu;
    let d = p.nu * r * r + 2.0 * p.beta;
    -0.5 * p.nu.ln() - HALF_LN_PI - p.alpha * (2.0 * p.beta).ln()
        + ln_gamma(p.alpha)
        + (p.alpha + 0.5) * d.ln()
        - ln_gamma(p.alpha + 0.5)
}

/// Value and gradient with respect to `(mu, nu, alpha, beta)`.
pub fn nig_nll_grad(p: &NigParams, y: f64) -> (f64, [f64; 4]) {
    let r = y - p.mu;
    let d = p.nu * r * r + 2.0 * p.beta;
    let a5 = p.alpha + 0.5;
    let grad = [
        -2.0 * a5 * p.nu * r / d,
        -0.5 / p.nu + a5 * r * r / d,
        -(2.0 * p.beta).ln() + digamma_unchecked(p.alpha) + d.ln() - digamma_unchecked(a5),
        -p.alpha / p.beta + 2.0 * a5 / d,
    ];
    (nig_nll(p, y), grad)
}

pub fn evidence_reg(alphas: &[f64]) -> f64 {
    alphas.iter().map(|a| (-a).exp()).sum()
}

pub fn evidence_reg_grad(alphas: &[f64]) -> Vec<f64> {
    alphas.iter().map(|a| -(-a).exp()).collect()
}
