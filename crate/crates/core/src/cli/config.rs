use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::{ActiveConfig, Strategy};
use crate::bounds::{BoundSettings, DEFAULT_DELTA, DEFAULT_K_NEIGHBORS, DEFAULT_SIGMA_P};
use crate::conformal::{validate_levels, ScoreMode, DEFAULT_LEVELS};
use crate::data::{CorruptionMode, DatasetKind, GeneratorConfig, PerturbationKind};
use crate::error::{Error, Result};
use crate::experiments::{
    default_perturbations, Ablation, ExperimentSpec, NcalSpec, PerturbationSpec, ShiftSpec,
};
use crate::head::HeadConfig;
use crate::objective::ObjectiveConfig;
use crate::trainer::TrainConfig;

/// Optimizer settings; the head, objective and seed come from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub grad_clip: f64,
    pub monotone_lr_scale: f64,
    pub risk_threshold: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::desk();
        TrainSection {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            validation_fraction: t.validation_fraction,
            grad_clip: t.grad_clip,
            monotone_lr_scale: t.monotone_lr_scale,
            risk_threshold: t.risk_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalSection {
    pub levels: Vec<f64>,
    /// Level used for single-level outputs (bounds, shift, active); must be listed.
    pub tau: f64,
    pub score_mode: ScoreMode,
}

impl Default for ConformalSection {
    fn default() -> Self {
        ConformalSection {
            levels: DEFAULT_LEVELS.to_vec(),
            tau: 0.9,
            score_mode: ScoreMode::Normalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSection {
    pub delta: f64,
    pub sigma_p: f64,
    pub k_neighbors: usize,
    pub sigma_grid_size: usize,
    pub shift_kind: PerturbationKind,
    /// Shift magnitudes; 0 is the unperturbed condition.
    pub magnitudes: Vec<f64>,
    pub ncal_sizes: Vec<usize>,
    pub pool_chains: usize,
    pub ncal_magnitude: f64,
}

impl Default for BoundSection {
    fn default() -> Self {
        let shift = ShiftSpec::default();
        let ncal = NcalSpec::default();
        BoundSection {
            delta: DEFAULT_DELTA,
            sigma_p: DEFAULT_SIGMA_P,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            sigma_grid_size: BoundSettings::default().sigma_grid_size,
            shift_kind: shift.kind,
            magnitudes: shift.magnitudes,
            ncal_sizes: ncal.sizes,
            pool_chains: ncal.pool_chains,
            ncal_magnitude: ncal.magnitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveSection {
    pub strategies: Vec<Strategy>,
    /// Added to the global seed.
    pub seeds: Vec<u64>,
    pub seed_size: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub calibration_fraction: f64,
    pub top_fraction: f64,
    /// Epoch budget for each retraining round.
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for ActiveSection {
    fn default() -> Self {
        let a = ActiveConfig::default();
        ActiveSection {
            strategies: Strategy::ALL.to_vec(),
            seeds: (0..20).collect(),
            seed_size: a.seed_size,
            batch_size: a.batch_size,
            rounds: a.rounds,
            calibration_fraction: a.calibration_fraction,
            top_fraction: a.top_fraction,
            max_epochs: a.retrain.max_epochs,
            patience: a.retrain.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Added to the global seed.
    pub seeds: Vec<u64>,
    pub ablations: Vec<Ablation>,
    pub perturbations: Vec<PerturbationSpec>,
    pub corruptions: Vec<CorruptionMode>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let spec = ExperimentSpec::default();
        ExperimentSection {
            seeds: spec.seeds,
            ablations: spec.ablations,
            perturbations: default_perturbations(),
            corruptions: spec.corruptions,
        }
    }
}

/// Every command reads this one schema; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory; kept out of the echo and the config hash.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    /// Dataset file for `pipeline` and `corrupt-priors`; generated when absent.
    pub dataset: Option<PathBuf>,
    /// Generator used when no dataset file is given; bound, ncal-sweep,
    /// active and experiments need chain data.
    pub dataset_kind: DatasetKind,
    pub generator: GeneratorConfig,
    pub head: HeadConfig,
    pub objective: ObjectiveConfig,
    pub train: TrainSection,
    pub conformal: ConformalSection,
    pub bounds: BoundSection,
    pub active: ActiveSection,
    pub experiment: ExperimentSection,
    pub corruption: CorruptionMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            dataset: None,
            dataset_kind: DatasetKind::Chain,
            generator: GeneratorConfig::default(),
            head: HeadConfig::default(),
            objective: ObjectiveConfig::default(),
            train: TrainSection::default(),
            conformal: ConformalSection::default(),
            bounds: BoundSection::default(),
            active: ActiveSection::default(),
            experiment: ExperimentSection::default(),
            corruption: CorruptionMode::Shuffle,
        }
    }
}

impl RunConfig {
    /// Parses config text; errors name the line and column.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json_str(&text)
            .map_err(|e| e.in_stage(format!("config {}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.head.validate()?;
        self.objective.validate()?;
        self.effective_train().validate()?;
        validate_levels(&self.conformal.levels)?;
        if !self
            .conformal
            .levels
            .iter()
            .any(|l| (l - self.conformal.tau).abs() < 1e-9)
        {
            return Err(Error::config(
                "conformal.tau",
                "must be one of conformal.levels",
            ));
        }
        if !(self.bounds.delta > 0.0 && self.bounds.delta < 1.0) {
            return Err(Error::config("bounds.delta", "must lie in (0, 1)"));
        }
        if !(self.bounds.sigma_p > 0.0) {
            return Err(Error::config("bounds.sigma_p", "must be positive"));
        }
        if self.bounds.magnitudes.is_empty() {
            return Err(Error::config("bounds.magnitudes", "must not be empty"));
        }
        if self.bounds.ncal_sizes.is_empty() {
            return Err(Error::config("bounds.ncal_sizes", "must not be empty"));
        }
        if self.active.strategies.is_empty() || self.active.seeds.is_empty() {
            return Err(Error::config(
                "active",
                "strategies and seeds must not be empty",
            ));
        }
        self.active_configs()
            .iter()
            .try_for_each(ActiveConfig::validate)?;
        self.experiment_spec("check").validate()
    }

    /// Training config with the top-level head, objective and seed folded in.
    pub fn effective_train(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: self.seed,
            validation_fraction: t.validation_fraction,
            grad_clip: t.grad_clip,
            monotone_lr_scale: t.monotone_lr_scale,
            risk_threshold: t.risk_threshold,
            objective: self.objective.clone(),
            head: HeadConfig {
                init_seed: self.seed,
                ..self.head.clone()
            },
        }
    }

    pub fn effective_generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            seed: self.seed,
            ..self.generator.clone()
        }
    }

    pub fn bound_settings(&self) -> BoundSettings {
        BoundSettings {
            tau: self.conformal.tau,
            delta: self.bounds.delta,
            sigma_p: self.bounds.sigma_p,
            k_neighbors: self.bounds.k_neighbors,
            sigma_grid_size: self.bounds.sigma_grid_size,
        }
    }

    pub fn active_configs(&self) -> Vec<ActiveConfig> {
        let a = &self.active;
        let mut retrain = self.effective_train();
        retrain.max_epochs = a.max_epochs;
        retrain.patience = a.patience;
        a.strategies
            .iter()
            .map(|&strategy| ActiveConfig {
                seed_size: a.seed_size,
                batch_size: a.batch_size,
                rounds: a.rounds,
                strategy,
                retrain: retrain.clone(),
                calibration_fraction: a.calibration_fraction,
                top_fraction: a.top_fraction,
                tau: self.conformal.tau,
                seed: self.seed,
            })
            .collect()
    }

    pub fn active_seeds(&self) -> Vec<u64> {
        self.active
            .seeds
            .iter()
            .map(|s| s.wrapping_add(self.seed))
            .collect()
    }

    pub fn experiment_spec(&self, name: &str) -> ExperimentSpec {
        ExperimentSpec {
            name: name.to_string(),
            generator: self.generator.clone(),
            train: self.effective_train(),
            seeds: self
                .experiment
                .seeds
                .iter()
                .map(|s| s.wrapping_add(self.seed))
                .collect(),
            levels: self.conformal.levels.clone(),
            tau: self.conformal.tau,
            score_mode: self.conformal.score_mode,
            ablations: self.experiment.ablations.clone(),
            shift: ShiftSpec {
                kind: self.bounds.shift_kind,
                magnitudes: self.bounds.magnitudes.clone(),
            },
            perturbations: self.experiment.perturbations.clone(),
            corruptions: self.experiment.corruptions.clone(),
            bounds: self.bound_settings(),
            ncal: NcalSpec {
                sizes: self.bounds.ncal_sizes.clone(),
                pool_chains: self.bounds.pool_chains,
                magnitude: self.bounds.ncal_magnitude,
            },
        }
    }
}
