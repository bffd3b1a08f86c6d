use serde::{Deserialize, Serialize};

use super::{
    evidence_reg, nig_nll_grad, prior_penalty, soft_conf_loss, HeadLoss, MonotoneMap,
    ObjectiveConfig,
};
use crate::error::{Error, Result};
use crate::head::{GraphInput, HeadOutput, HeadParams, NigParams};

/// Per-node targets for one forward pass; only `mask`ed nodes enter the loss.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub targets: &'a [f64],
    pub priors: &'a [f64],
    pub mask: &'a [bool],
}

/// Unweighted terms and the weighted total. `nig` holds the squared error
/// when the head is trained as a point regressor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nig: f64,
    pub evidence: f64,
    pub prior: f64,
    pub conf: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub d_raw: Vec<[f64; 5]>,
    pub d_map: Vec<f64>,
}

fn check(term: &'static str, v: f64, epoch: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term, epoch })
    }
}

pub fn total_loss(
    out: &HeadOutput,
    inputs: LossInputs,
    map: &MonotoneMap,
    cfg: &ObjectiveConfig,
    epoch: usize,
) -> Result<LossBreakdown> {
    total_loss_with_grad(out, inputs, map, cfg, epoch).map(|(l, _)| l)
}

pub fn total_loss_with_grad(
    out: &HeadOutput,
    inputs: LossInputs,
    map: &MonotoneMap,
    cfg: &ObjectiveConfig,
    epoch: usize,
) -> Result<(LossBreakdown, LossGradient)> {
    let n_all = out.nig.len();
    if inputs.targets.len() != n_all || inputs.priors.len() != n_all || inputs.mask.len() != n_all {
        return Err(Error::Dimension(format!(
            "{n_all} outputs, {} targets, {} priors, {} mask entries",
            inputs.targets.len(),
            inputs.priors.len(),
            inputs.mask.len()
        )));
    }
    let idx: Vec<usize> = (0..n_all).filter(|&i| inputs.mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::Empty("no nodes selected for the loss"));
    }
    let inv_n = 1.0 / idx.len() as f64;
    let mut d_nig = vec![[0.0; 4]; n_all];
    let mut d_map = vec![0.0; map.params.len()];
    let mut loss = LossBreakdown::default();

    match cfg.head_loss {
        HeadLoss::Evidential => {
            for &i in &idx {
                let (v, g) = nig_nll_grad(&out.nig[i], inputs.targets[i]);
                loss.nig += v * inv_n;
                for k in 0..4 {
                    d_nig[i][k] += g[k] * inv_n;
                }
            }
            let alphas: Vec<f64> = idx.iter().map(|&i| out.nig[i].alpha).collect();
            loss.evidence = evidence_reg(&alphas);
            for (&i, a) in idx.iter().zip(&alphas) {
                d_nig[i][2] -= cfg.lambda_evid * (-a).exp();
            }
            let b: Vec<f64> = idx.iter().map(|&i| inputs.priors[i]).collect();
            let u: Vec<f64> = idx
                .iter()
                .map(|&i| out.nig[i].epistemic_variance())
                .collect();
            let pp = prior_penalty(&b, &u, map, cfg.prior_penalty_reduction)?;
            loss.prior = pp.value;
            for ((&i, &du), &ui) in idx.iter().zip(&pp.d_u).zip(&u) {
                if du == 0.0 {
                    continue;
                }
                let g = cfg.lambda_prior * du;
                let p = &out.nig[i];
                d_nig[i][1] -= g * ui / p.nu;
                d_nig[i][2] -= g * ui / (p.alpha - 1.0);
                d_nig[i][3] += g * ui / p.beta;
            }
            for (acc, g) in d_map.iter_mut().zip(&pp.d_map) {
                *acc += cfg.lambda_prior * g;
            }
        }
        HeadLoss::SquaredError => {
            for &i in &idx {
                let r = inputs.targets[i] - out.nig[i].mu;
                loss.nig += r * r * inv_n;
                d_nig[i][0] -= 2.0 * r * inv_n;
            }
        }
    }

    let scores: Vec<f64> = idx
        .iter()
        .map(|&i| (inputs.targets[i] - out.nig[i].mu).abs())
        .collect();
    let sc = soft_conf_loss(&scores, cfg.gamma, cfg.kappa, cfg.stopgrad_at(epoch))?;
    loss.conf = sc.value;
    for (&i, ds) in idx.iter().zip(&sc.d_scores) {
        let r = inputs.targets[i] - out.nig[i].mu;
        d_nig[i][0] -= cfg.lambda_conf * ds * r.signum() * f64::from(r != 0.0);
    }

    loss.nig = check("nig", loss.nig, epoch)?;
    loss.evidence = check("evidence", loss.evidence, epoch)?;
    loss.prior = check("prior", loss.prior, epoch)?;
    loss.conf = check("soft_conf", loss.conf, epoch)?;
    loss.total = loss.nig
        + cfg.lambda_evid * loss.evidence
        + cfg.lambda_prior * loss.prior
        + cfg.lambda_conf * loss.conf;

    let d_raw = out
        .raw
        .iter()
        .zip(&d_nig)
        .map(|(r, g)| {
            let c = NigParams::grad_to_raw(r, g);
            [c[0], c[1], c[2], c[3], 0.0]
        })
        .collect();
    Ok((loss, LossGradient { d_raw, d_map }))
}

impl HeadParams {
    /// Loss on one input plus gradients for the head weights and the monotone map.
    pub fn loss_and_gradient(
        &self,
        input: &GraphInput,
        inputs: LossInputs,
        map: &MonotoneMap,
        cfg: &ObjectiveConfig,
        epoch: usize,
    ) -> Result<(LossBreakdown, Vec<f64>, Vec<f64>)> {
        let (out, cache) = self.forward_cached(input)?;
        let (loss, grad) = total_loss_with_grad(&out, inputs, map, cfg, epoch)?;
        let head_grad = self.backward(input, &cache, &grad.d_raw)?;
        Ok((loss, head_grad, grad.d_map))
    }
}
