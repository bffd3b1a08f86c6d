//! Training objective: NIG likelihood, evidence and prior regularizers,
//! the smoothed conformal exceedance loss and their gradients.

mod monotone;
mod nig;
mod penalties;
mod total;

pub use monotone::{monotone_eval, MonotoneMap};
pub use nig::{evidence_reg, evidence_reg_grad, nig_nll, nig_nll_grad};
pub use penalties::{prior_penalty, soft_conf_loss, PriorPenalty, SoftConf};
pub use total::{total_loss, total_loss_with_grad, LossBreakdown, LossGradient, LossInputs};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
}

/// Per-node likelihood term of the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLoss {
    /// NIG negative log-likelihood with evidence and prior regularizers.
    Evidential,
    /// Mean squared error on `mu` only; variance channels are untrained.
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub gamma: f64,
    pub kappa: f64,
    pub lambda_evid: f64,
    pub lambda_prior: f64,
    pub lambda_conf: f64,
    pub stopgrad_epochs: usize,
    pub prior_penalty_reduction: Reduction,
    pub monotone_hidden: usize,
    pub head_loss: HeadLoss,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            gamma: 10.0,
            kappa: 0.1,
            lambda_evid: 0.01,
            lambda_prior: 0.1,
            lambda_conf: 0.05,
            stopgrad_epochs: 10,
            prior_penalty_reduction: Reduction::Mean,
            monotone_hidden: 8,
            head_loss: HeadLoss::Evidential,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("objective.gamma", self.gamma),
            ("objective.kappa", self.kappa),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(
                    field,
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        let weights = [
            ("objective.lambda_evid", self.lambda_evid),
            ("objective.lambda_prior", self.lambda_prior),
            ("objective.lambda_conf", self.lambda_conf),
        ];
        for (field, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(
                    field,
                    format!("must be nonnegative and finite, got {v}"),
                ));
            }
        }
        if self.monotone_hidden == 0 {
            return Err(Error::config(
                "objective.monotone_hidden",
                "must be positive",
            ));
        }
        Ok(())
    }

    /// Whether the soft-quantile path is detached at this epoch.
    pub fn stopgrad_at(&self, epoch: usize) -> bool {
        epoch < self.stopgrad_epochs
    }
}
