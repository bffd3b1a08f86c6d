//! Message-passing evidential regressor.
//!
//! A stack of mean-aggregation graph layers feeds a linear readout with five
//! raw channels `r`. Constraints map them onto Normal-Inverse-Gamma parameters
//! `mu = r0`, `nu = softplus(r1)`, `alpha = 1 + softplus(r2)`,
//! `beta = softplus(r3)` plus a risk logit `r4`.

mod checkpoint;
mod network;

pub use checkpoint::{
    head_from_json_str, head_to_json_string, head_to_json_with_provenance, load_head, save_head,
    HEAD_VERSION,
};
pub use network::{ForwardCache, GraphInput, HeadOutput, HeadParams, LayerLayout};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus};

/// Threshold (target units) above which a node counts as high-risk.
pub const DEFAULT_RISK_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigParams {
    pub mu: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NigParams {
    pub fn new(mu: f64, nu: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = NigParams {
            mu,
            nu,
            alpha,
            beta,
        };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::Domain(format!("invalid NIG parameters {p:?}")))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.mu.is_finite()
            && self.nu > 0.0
            && self.alpha > 1.0
            && self.beta > 0.0
            && self.nu.is_finite()
            && self.alpha.is_finite()
            && self.beta.is_finite()
    }

    /// Applies the output constraints to a raw readout vector.
    ///
    /// Floors keep the inequalities strict once softplus underflows.
    pub fn from_raw(r: &[f64; 5]) -> Self {
        NigParams {
            mu: r[0],
            nu: softplus(r[1], 1.0).max(f64::MIN_POSITIVE),
            alpha: 1.0 + softplus(r[2], 1.0).max(f64::EPSILON),
            beta: softplus(r[3], 1.0).max(f64::MIN_POSITIVE),
        }
    }

    /// Chains `dL/d(mu, nu, alpha, beta)` back to the first four raw channels.
    pub fn grad_to_raw(r: &[f64; 5], g: &[f64; 4]) -> [f64; 4] {
        [
            g[0],
            g[1] * sigmoid(r[1]),
            g[2] * sigmoid(r[2]),
            g[3] * sigmoid(r[3]),
        ]
    }

    /// `beta / (nu (alpha - 1))`.
    pub fn predictive_variance(&self) -> f64 {
        self.beta / (self.nu * (self.alpha - 1.0))
    }

    /// Variance of the mean under the posterior; identical to the predictive variance here.
    pub fn epistemic_variance(&self) -> f64 {
        self.predictive_variance()
    }

    /// Expected observation noise `beta / (alpha - 1)`.
    pub fn aleatoric_variance(&self) -> f64 {
        self.beta / (self.alpha - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub widths: Vec<usize>,
    pub layer_norm: bool,
    /// When false the prior channel is fed as zero.
    pub use_prior_input: bool,
    pub init_seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            widths: vec![16, 32, 16],
            layer_norm: true,
            use_prior_input: true,
            init_seed: 0,
        }
    }
}

impl HeadConfig {
    /// Wider layers (128, 256, 128) for larger corpora.
    pub fn wide() -> Self {
        HeadConfig {
            widths: vec![128, 256, 128],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config(
                "head.widths",
                "need at least one layer, all widths positive",
            ));
        }
        Ok(())
    }
}

pub fn risk_probability(logit: f64) -> f64 {
    sigmoid(logit)
}

/// Marks nodes whose target exceeds `threshold`.
pub fn label_risk(ds: &Dataset, threshold: f64) -> Result<Vec<bool>> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::Domain(format!(
            "risk threshold must be positive, got {threshold}"
        )));
    }
    Ok(ds.nodes.iter().map(|n| n.target_y > threshold).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_chain_dataset, GeneratorConfig};

    #[test]
    fn variance_examples() {
        let p = NigParams::new(0.0, 1.0, 2.0, 3.0).unwrap();
        assert_eq!(p.predictive_variance(), 3.0);
        let q = NigParams { beta: 6.0, ..p };
        assert_eq!(q.predictive_variance(), 6.0);
        let big = NigParams { alpha: 1e12, ..p };
        assert!(big.predictive_variance() < 1e-11);

        let p = NigParams::new(0.0, 2.0, 3.0, 4.0).unwrap();
        assert_eq!(p.epistemic_variance(), 1.0);
        assert_eq!(p.aleatoric_variance(), 2.0);
        let unit = NigParams { nu: 1.0, ..p };
        assert_eq!(unit.epistemic_variance(), unit.aleatoric_variance());
        let sharp = NigParams { nu: 1e12, ..p };
        assert!(sharp.epistemic_variance() < 1e-11);
        assert_eq!(sharp.aleatoric_variance(), 2.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(NigParams::new(0.0, 0.0, 2.0, 1.0).is_err());
        assert!(NigParams::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(NigParams::new(0.0, 1.0, 2.0, -1.0).is_err());
        assert!(NigParams::new(f64::NAN, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn zero_raw_gives_log_two() {
        let p = NigParams::from_raw(&[0.0; 5]);
        let ln2 = std::f64::consts::LN_2;
        assert_eq!(p.mu, 0.0);
        assert!((p.nu - ln2).abs() < 1e-15);
        assert!((p.alpha - 1.0 - ln2).abs() < 1e-15);
        assert!((p.beta - ln2).abs() < 1e-15);
    }

    #[test]
    fn risk_labels() {
        assert_eq!(risk_probability(0.0), 0.5);
        let ds = gen_chain_dataset(&GeneratorConfig::default()).unwrap();
        assert!(label_risk(&ds, f64::INFINITY).unwrap().iter().all(|&l| !l));
        let labels = label_risk(&ds, DEFAULT_RISK_THRESHOLD).unwrap();
        let pos = labels.iter().filter(|&&l| l).count();
        assert!(pos > 0 && pos < labels.len(), "positive count {pos}");
        assert!(label_risk(&ds, 0.0).is_err());
    }
}
