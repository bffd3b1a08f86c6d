//! Experiment recipes at desk scale.
//!
//! Every recipe runs one independent simulation per seed (fanned out over a
//! rayon pool capped by `CALPRO_THREADS`) and then reduces the per-seed rows
//! in seed order, so reports are identical across reruns regardless of the
//! thread count.

mod ablation;
mod bound;
mod corruption;
mod shift;

pub use ablation::{
    run_calibration_experiment, run_efficiency_experiment, AblationRow, AblationSummary,
    CalibrationReport, EfficiencyReport, EfficiencyRow,
};
pub use bound::{
    pool_generator, run_bound_experiment, run_ncal_experiment, BoundConditionSummary,
    BoundExperiment, NcalExperiment, NcalSummary,
};
pub use corruption::{run_prior_corruption, CorruptionReport, CorruptionRow, CorruptionSummary};
pub use shift::{
    run_perturbation_correlation, run_shift_experiment, CorrelationReport, CorrelationRow,
    ShiftReport, ShiftRow, ShiftSummary,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundSettings, DEFAULT_NCAL_SIZES};
use crate::conformal::{calibrate, ConformalCalibration, ScoreMode, DEFAULT_LEVELS};
use crate::data::{gen_chain_dataset, CorruptionMode, Dataset, GeneratorConfig, PerturbationKind};
use crate::error::{Error, Result};
use crate::head::NigParams;
use crate::numerics::median;
use crate::objective::{HeadLoss, ObjectiveConfig};
use crate::trainer::{train, TrainConfig, TrainedModel};

pub const THREADS_ENV: &str = "CALPRO_THREADS";
/// Normal quantile for two-sided 95% binomial intervals.
const Z95: f64 = 1.959_963_984_540_054;

/// Worker count: `CALPRO_THREADS` when set to a positive integer, otherwise
/// the available parallelism.
pub fn thread_cap() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` once per seed on a bounded pool; results keep seed order.
pub fn fan_out<T, F>(seeds: &[u64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap())
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| f(s).map_err(|e| e.in_stage(format!("seed {s}"))))
            .collect()
    })
}

/// Half-width of the normal-approximation 95% interval for a proportion.
pub fn binomial_half_width(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    Z95 * (p * (1.0 - p) / n as f64).sqrt()
}

/// One configuration of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// Full training, intervals from the evidential Gaussian at `z`.
    NoConformal,
    /// Squared-error point head with absolute conformal scores.
    NoEvidential,
    /// No prior input channel and no prior penalty.
    NoPriors,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoConformal,
        Ablation::NoEvidential,
        Ablation::NoPriors,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoConformal => "no_conformal",
            Ablation::NoEvidential => "no_evidential",
            Ablation::NoPriors => "no_priors",
        }
    }

    /// Training config for this configuration; `NoConformal` trains like `Full`.
    pub fn train_config(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Ablation::Full | Ablation::NoConformal => {}
            Ablation::NoEvidential => cfg.objective.head_loss = HeadLoss::SquaredError,
            Ablation::NoPriors => {
                cfg.objective.lambda_prior = 0.0;
                cfg.head.use_prior_input = false;
            }
        }
        cfg
    }

    /// Score mode used for calibration; `None` means no conformal step.
    pub fn score_mode(self, default: ScoreMode) -> Option<ScoreMode> {
        match self {
            Ablation::Full | Ablation::NoPriors => Some(default),
            Ablation::NoConformal => None,
            Ablation::NoEvidential => Some(ScoreMode::Absolute),
        }
    }

    /// The configuration whose trained model this one reuses.
    fn trained_as(self) -> Ablation {
        match self {
            Ablation::NoConformal => Ablation::Full,
            other => other,
        }
    }
}

/// Unregularized head: all auxiliary loss weights set to zero.
pub fn vanilla_objective(base: &ObjectiveConfig) -> ObjectiveConfig {
    ObjectiveConfig {
        lambda_evid: 0.0,
        lambda_prior: 0.0,
        lambda_conf: 0.0,
        ..base.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    pub kind: PerturbationKind,
    /// Perturbation magnitudes; 0 means the unperturbed data.
    pub magnitudes: Vec<f64>,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            kind: PerturbationKind::Gaussian,
            magnitudes: vec![0.0, 0.1, 0.25, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub magnitude: f64,
}

pub fn default_perturbations() -> Vec<PerturbationSpec> {
    vec![
        PerturbationSpec {
            kind: PerturbationKind::Gaussian,
            magnitude: 0.5,
        },
        PerturbationSpec {
            kind: PerturbationKind::SegmentSwap,
            magnitude: 2.0,
        },
        PerturbationSpec {
            kind: PerturbationKind::BlockRotate,
            magnitude: 0.6,
        },
        PerturbationSpec {
            kind: PerturbationKind::Blur,
            magnitude: 2.0,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcalSpec {
    pub sizes: Vec<usize>,
    /// Chains in the separately generated calibration pool.
    pub pool_chains: usize,
    /// Gaussian perturbation applied to the test data.
    pub magnitude: f64,
}

impl Default for NcalSpec {
    fn default() -> Self {
        NcalSpec {
            sizes: DEFAULT_NCAL_SIZES.to_vec(),
            pool_chains: 104,
            magnitude: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Source generator; its seed is replaced by each run seed.
    pub generator: GeneratorConfig,
    /// Training settings; seed and head init seed are replaced by each run seed.
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub levels: Vec<f64>,
    /// Level used for single-level summaries.
    pub tau: f64,
    pub score_mode: ScoreMode,
    pub ablations: Vec<Ablation>,
    pub shift: ShiftSpec,
    pub perturbations: Vec<PerturbationSpec>,
    pub corruptions: Vec<CorruptionMode>,
    pub bounds: BoundSettings,
    pub ncal: NcalSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "calibration".into(),
            generator: GeneratorConfig::default(),
            train: TrainConfig::desk(),
            seeds: (0..20).collect(),
            levels: DEFAULT_LEVELS.to_vec(),
            tau: 0.9,
            score_mode: ScoreMode::Normalized,
            ablations: Ablation::ALL.to_vec(),
            shift: ShiftSpec::default(),
            perturbations: default_perturbations(),
            corruptions: vec![
                CorruptionMode::Shuffle,
                CorruptionMode::Invert,
                CorruptionMode::Noise(0.2),
            ],
            bounds: BoundSettings::default(),
            ncal: NcalSpec::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("experiment.seeds", "must not be empty"));
        }
        crate::conformal::validate_levels(&self.levels)?;
        if !self.levels.iter().any(|l| (l - self.tau).abs() < 1e-9) {
            return Err(Error::config("experiment.tau", "must be one of the levels"));
        }
        let mut seen = self.ablations.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.ablations.len() {
            return Err(Error::config(
                "experiment.ablations",
                "each configuration may appear once",
            ));
        }
        if self
            .shift
            .magnitudes
            .iter()
            .any(|m| !(*m >= 0.0 && m.is_finite()))
        {
            return Err(Error::config(
                "experiment.shift.magnitudes",
                "must be finite and nonnegative",
            ));
        }
        if self.perturbations.iter().any(|p| !(p.magnitude > 0.0)) {
            return Err(Error::config(
                "experiment.perturbations",
                "magnitudes must be positive",
            ));
        }
        self.generator.validate()?;
        self.train.validate()
    }

    /// Generator and training configs for one run seed.
    pub fn seeded(&self, seed: u64) -> (GeneratorConfig, TrainConfig) {
        let generator = GeneratorConfig {
            seed,
            ..self.generator.clone()
        };
        let mut train = self.train.clone();
        train.seed = seed;
        train.head.init_seed = seed;
        (generator, train)
    }
}

/// A trained model with its predictions and calibration on one dataset.
pub(crate) struct Fitted {
    pub model: TrainedModel,
    pub preds: Vec<NigParams>,
    pub calib: Option<ConformalCalibration>,
}

pub(crate) fn fit(
    cfg: &TrainConfig,
    ds: &Dataset,
    levels: &[f64],
    mode: Option<ScoreMode>,
) -> Result<Fitted> {
    let model = train(cfg, ds).map_err(|e| e.in_stage("train"))?;
    let preds = model.predict(ds)?;
    let calib = mode
        .map(|m| calibrate(&preds, ds, levels, m))
        .transpose()
        .map_err(|e| e.in_stage("calibrate"))?;
    Ok(Fitted {
        model,
        preds,
        calib,
    })
}

pub(crate) fn source_data(spec: &ExperimentSpec, seed: u64) -> Result<(Dataset, TrainConfig)> {
    let (generator, train) = spec.seeded(seed);
    let ds = gen_chain_dataset(&generator).map_err(|e| e.in_stage("generate"))?;
    Ok((ds, train))
}

/// Derived seed for the `k`-th perturbation of run `seed`.
pub(crate) fn perturb_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k + 1)
}

/// Median of `f` over the rows matching `keep`.
pub(crate) fn median_of<R>(rows: &[R], keep: impl Fn(&R) -> bool, f: impl Fn(&R) -> f64) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| keep(r))
        .map(f)
        .filter(|x| !x.is_nan())
        .collect();
    median(&v)
}

/// CSV writer that starts every table with the provenance comment line.
pub fn csv_table(
    provenance: &str,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> String {
    let mut out = String::new();
    out.push_str(provenance);
    out.push('\n');
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

/// Shortest round-trip formatting, empty for missing values.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}
