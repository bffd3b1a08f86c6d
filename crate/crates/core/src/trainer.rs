//! Minibatch training of the evidential head with early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::head::{GraphInput, HeadConfig, HeadParams, NigParams, DEFAULT_RISK_THRESHOLD};
use crate::metrics::{default_grid, equal_mass_bins};
use crate::numerics::{sigmoid, RngStream};
use crate::objective::{total_loss, LossBreakdown, LossInputs, MonotoneMap, ObjectiveConfig};

const VALIDATION_BINS: usize = 4;
const MIN_VALIDATION_NODES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Graphs per minibatch.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Share of training graphs held out for validation ECE.
    pub validation_fraction: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Learning-rate multiplier for the monotone map; 0 keeps it at its initialization.
    pub monotone_lr_scale: f64,
    pub risk_threshold: f64,
    pub objective: ObjectiveConfig,
    pub head: HeadConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            validation_fraction: 0.2,
            grad_clip: 10.0,
            monotone_lr_scale: 0.0,
            risk_threshold: DEFAULT_RISK_THRESHOLD,
            objective: ObjectiveConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Settings used by the experiment recipes: larger steps and small
    /// batches so a run converges in about a second on one core.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 4,
            max_epochs: 120,
            patience: 40,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.patience > self.max_epochs && self.max_epochs > 0 {
            return Err(Error::config(
                "train.patience",
                "must not exceed max_epochs",
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config(
                "train.validation_fraction",
                "must lie in [0, 1)",
            ));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("train.grad_clip", "must be positive"));
        }
        if !(self.monotone_lr_scale >= 0.0) {
            return Err(Error::config(
                "train.monotone_lr_scale",
                "must be nonnegative",
            ));
        }
        if !(self.risk_threshold > 0.0) {
            return Err(Error::config("train.risk_threshold", "must be positive"));
        }
        self.objective.validate()?;
        self.head.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's minibatches.
    pub loss: LossBreakdown,
    pub val_ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub seed: u64,
    pub config: TrainConfig,
    pub train_graphs: Vec<usize>,
    pub validation_graphs: Vec<usize>,
    /// Full training-set loss at initialization.
    pub initial_loss: LossBreakdown,
    pub initial_val_ece: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned; 0 means the initialization.
    pub selected_epoch: usize,
    pub stopped_early: bool,
    /// Excluded from serialized records so they stay byte-identical across reruns.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub head: HeadParams,
    pub map: MonotoneMap,
    pub record: TrainRecord,
}

impl TrainedModel {
    pub fn predict(&self, ds: &Dataset) -> Result<Vec<NigParams>> {
        Ok(self.head.predict(ds)?.nig)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One step over `params`, with per-slice learning rates.
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lrs: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut k = 0;
        for ((p, g), &lr) in params.iter_mut().zip(grads).zip(lrs) {
            for (w, &gi) in p.iter_mut().zip(g.iter()) {
                self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * gi;
                self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * gi * gi;
                if lr > 0.0 {
                    *w -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
                }
                k += 1;
            }
        }
    }
}

/// Graphs holding training nodes, split into (fit, validation) by `seed`.
pub fn holdout_graphs(ds: &Dataset, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut graphs = ds.graphs_in(Split::Train);
    graphs.shuffle(&mut RngStream::new(seed, 0x7661_6c69).rng());
    let n_val = ((graphs.len() as f64) * fraction).round() as usize;
    let n_val = if fraction > 0.0 && graphs.len() > 1 {
        n_val.clamp(1, graphs.len() - 1)
    } else {
        0
    };
    let mut val = graphs.split_off(graphs.len() - n_val);
    graphs.sort_unstable();
    val.sort_unstable();
    (graphs, val)
}

/// Cross-fit conformal ECE on validation nodes.
///
/// Each half of the nodes is scored against quantiles from the other half
/// (normalized scores, ties split fractionally); coverage gaps over the level
/// grid are averaged inside equal-mass predicted-variance bins.
pub fn validation_ece(preds: &[NigParams], y: &[f64], levels: &[f64]) -> Result<f64> {
    if preds.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            preds.len(),
            y.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::Empty("validation set"));
    }
    if levels.is_empty() {
        return Err(Error::Empty("validation levels"));
    }
    let mode = crate::conformal::ScoreMode::Normalized;
    let scores: Vec<f64> = preds
        .iter()
        .zip(y)
        .map(|(p, &t)| mode.score(p, t))
        .collect();
    let halves: [Vec<f64>; 2] = [0, 1].map(|h| {
        let mut s: Vec<f64> = scores.iter().skip(h).step_by(2).copied().collect();
        s.sort_by(f64::total_cmp);
        s
    });
    // soft coverage of node i at each level
    let cov: Vec<Vec<f64>> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let other = &halves[1 - i % 2];
            let n = other.len() as f64;
            let less = other.partition_point(|&v| v < s) as f64;
            let eq = other.partition_point(|&v| v <= s) as f64 - less;
            levels
                .iter()
                .map(|t| ((t * (n + 1.0) - less) / (eq + 1.0)).clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    let var: Vec<f64> = preds.iter().map(NigParams::predictive_variance).collect();
    let n_bins = VALIDATION_BINS.min(y.len() / 2).max(1);
    let bins = equal_mass_bins(&var, n_bins);
    let mut total = 0.0;
    for bin in &bins {
        for (k, t) in levels.iter().enumerate() {
            let c = bin.iter().map(|&i| cov[i][k]).sum::<f64>() / bin.len() as f64;
            total += (c - t).abs();
        }
    }
    Ok(total / (bins.len() * levels.len()) as f64)
}

struct Batch {
    input: GraphInput,
    targets: Vec<f64>,
    priors: Vec<f64>,
    mask: Vec<bool>,
}

impl Batch {
    fn new(ds: &Dataset, per_graph: &[GraphInput], graphs: &[usize]) -> Result<Self> {
        let parts: Vec<&GraphInput> = graphs.iter().map(|&g| &per_graph[g]).collect();
        let input = GraphInput::concat(&parts)?;
        let targets = input
            .node_ids
            .iter()
            .map(|&i| ds.nodes[i].target_y)
            .collect();
        let priors = input
            .node_ids
            .iter()
            .map(|&i| ds.nodes[i].prior_b)
            .collect();
        let mask = input
            .node_ids
            .iter()
            .map(|&i| ds.splits[i] == Split::Train)
            .collect();
        Ok(Batch {
            input,
            targets,
            priors,
            mask,
        })
    }

    fn inputs(&self) -> LossInputs<'_> {
        LossInputs {
            targets: &self.targets,
            priors: &self.priors,
            mask: &self.mask,
        }
    }
}

fn val_ece_of(head: &HeadParams, batch: &Batch) -> Result<f64> {
    let out = head.forward(&batch.input)?;
    let (p, y): (Vec<NigParams>, Vec<f64>) = (0..batch.mask.len())
        .filter(|&i| batch.mask[i])
        .map(|i| (out.nig[i], batch.targets[i]))
        .unzip();
    validation_ece(&p, &y, &default_grid())
}

/// Trains on `ds`, holding out a share of training graphs for validation.
pub fn train(cfg: &TrainConfig, ds: &Dataset) -> Result<TrainedModel> {
    let (mut fit, mut val) = holdout_graphs(ds, cfg.validation_fraction, cfg.seed);
    // Sparse labels (active rounds) can leave a held-out set too small to
    // score; early stopping then falls back to the fit graphs.
    let n_val: usize = val
        .iter()
        .map(|&g| {
            ds.graph_nodes(g)
                .filter(|&i| ds.splits[i] == Split::Train)
                .count()
        })
        .sum();
    if n_val < MIN_VALIDATION_NODES {
        fit.append(&mut val);
        fit.sort_unstable();
    }
    train_on_graphs(cfg, ds, &fit, &val)
}

/// Trains on the training-tagged nodes of `fit_graphs`; `val_graphs` drive early stopping.
pub fn train_on_graphs(
    cfg: &TrainConfig,
    ds: &Dataset,
    fit_graphs: &[usize],
    val_graphs: &[usize],
) -> Result<TrainedModel> {
    cfg.validate()?;
    let started = Instant::now();
    let per_graph = GraphInput::per_graph(ds, cfg.head.use_prior_input);
    let mut fit: Vec<usize> = fit_graphs
        .iter()
        .copied()
        .filter(|&g| ds.graph_nodes(g).any(|i| ds.splits[i] == Split::Train))
        .collect();
    if fit.is_empty() {
        return Err(Error::Empty("training graphs"));
    }
    let full = Batch::new(ds, &per_graph, &fit)?;
    let val = if val_graphs.is_empty() {
        None
    } else {
        Some(Batch::new(ds, &per_graph, val_graphs)?)
    };
    let val_ref = val.as_ref().unwrap_or(&full);

    let mut head = HeadParams::init(cfg.head.clone(), ds.feature_dim() + 1)?;
    let ys: Vec<f64> = (0..full.mask.len())
        .filter(|&i| full.mask[i])
        .map(|i| full.targets[i])
        .collect();
    head.set_output_bias(0, ys.iter().sum::<f64>() / ys.len() as f64);
    let mut map = MonotoneMap::new(cfg.objective.monotone_hidden)?;

    let initial_loss = total_loss(
        &head.forward(&full.input)?,
        full.inputs(),
        &map,
        &cfg.objective,
        0,
    )?;
    let initial_val_ece = val_ece_of(&head, val_ref)?;
    let mut record = TrainRecord {
        seed: cfg.seed,
        config: cfg.clone(),
        train_graphs: fit.clone(),
        validation_graphs: val_graphs.to_vec(),
        initial_loss,
        initial_val_ece,
        epochs: Vec::new(),
        selected_epoch: 0,
        stopped_early: false,
        wall_clock_secs: 0.0,
    };

    let mut best = (f64::INFINITY, head.clone(), map.clone());
    let mut adam = Adam::new(head.n_params() + map.params.len());
    let mut rng = RngStream::new(cfg.seed, 0x7472_6169).rng();
    let lrs = [cfg.learning_rate, cfg.learning_rate * cfg.monotone_lr_scale];
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        fit.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut n_batches = 0.0;
        for chunk in fit.chunks(cfg.batch_size) {
            let mut graphs = chunk.to_vec();
            graphs.sort_unstable();
            let batch = Batch::new(ds, &per_graph, &graphs)?;
            if !batch.mask.iter().any(|&m| m) {
                continue;
            }
            let (loss, mut g_head, mut g_map) =
                head.loss_and_gradient(&batch.input, batch.inputs(), &map, &cfg.objective, epoch)?;
            if cfg.monotone_lr_scale == 0.0 {
                g_map.fill(0.0);
            }
            let norm = g_head
                .iter()
                .chain(&g_map)
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite {
                    term: "gradient",
                    epoch,
                });
            }
            if norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                g_head
                    .iter_mut()
                    .chain(g_map.iter_mut())
                    .for_each(|g| *g *= s);
            }
            adam.step(
                &mut [&mut head.weights, &mut map.params],
                &[&g_head, &g_map],
                &lrs,
            );
            sum.nig += loss.nig;
            sum.evidence += loss.evidence;
            sum.prior += loss.prior;
            sum.conf += loss.conf;
            sum.total += loss.total;
            n_batches += 1.0;
        }
        let mean = LossBreakdown {
            nig: sum.nig / n_batches,
            evidence: sum.evidence / n_batches,
            prior: sum.prior / n_batches,
            conf: sum.conf / n_batches,
            total: sum.total / n_batches,
        };
        let val_ece = val_ece_of(&head, val_ref)?;
        record.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss: mean,
            val_ece,
        });
        if val_ece < best.0 {
            best = (val_ece, head.clone(), map.clone());
            record.selected_epoch = epoch + 1;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience.max(1) {
                record.stopped_early = true;
                break;
            }
        }
    }
    if cfg.max_epochs > 0 {
        head = best.1;
        map = best.2;
    }
    fit_risk_readout(&mut head, &full, cfg.risk_threshold)?;
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(TrainedModel { head, map, record })
}

/// L2-regularized logistic fit of the risk channel on frozen final node states.
fn fit_risk_readout(head: &mut HeadParams, batch: &Batch, threshold: f64) -> Result<()> {
    let (_, cache) = head.forward_cached(&batch.input)?;
    let (h, d) = cache.hidden();
    let rows: Vec<usize> = (0..batch.mask.len()).filter(|&i| batch.mask[i]).collect();
    let labels: Vec<f64> = rows
        .iter()
        .map(|&i| f64::from(batch.targets[i] > threshold))
        .collect();
    let n = rows.len() as f64;
    let mut w = vec![0.0; d];
    let rate = labels.iter().sum::<f64>() / n;
    let mut b = ((rate + 1e-3) / (1.0 - rate + 1e-3)).ln();
    const L2: f64 = 1e-3;
    const STEP: f64 = 0.5;
    for _ in 0..300 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (&i, &l) in rows.iter().zip(&labels) {
            let x = &h[i * d..(i + 1) * d];
            let z = b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
            let r = sigmoid(z) - l;
            gb += r;
            for k in 0..d {
                gw[k] += r * x[k];
            }
        }
        for k in 0..d {
            w[k] -= STEP * (gw[k] / n + L2 * w[k]);
        }
        b -= STEP * gb / n;
    }
    head.set_risk_readout(&w, b)
}
