//! Command-line front end. The binary only calls [`main_with_args`].

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

pub use commands::{
    cmd_active, cmd_bound, cmd_corrupt_priors, cmd_experiment, cmd_gen_data, cmd_ncal_sweep,
    cmd_pipeline, summarize, DatasetSummary, OutDir, PipelineReport, RiskSummary, EXPERIMENTS,
};
pub use config::{
    ActiveSection, BoundSection, ConformalSection, ExperimentSection, RunConfig, TrainSection,
};

use crate::conformal::ScoreMode;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoreArg {
    Absolute,
    Normalized,
}

impl From<ScoreArg> for ScoreMode {
    fn from(a: ScoreArg) -> Self {
        match a {
            ScoreArg::Absolute => ScoreMode::Absolute,
            ScoreArg::Normalized => ScoreMode::Normalized,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "calpro",
    version,
    about = "Prior-aware evidential-conformal calibration"
)]
struct Cli {
    /// JSON run configuration; defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the conformal score mode.
    #[arg(long, global = true, value_enum)]
    score_mode: Option<ScoreArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData,
    /// Train, calibrate, evaluate and flag risk.
    Pipeline,
    /// Coverage bound against empirical coverage under shift.
    Bound,
    /// Bound tightness as the calibration set grows.
    NcalSweep,
    /// Compare acquisition strategies.
    Active,
    /// Run a multi-seed experiment recipe.
    Experiment {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXPERIMENTS))]
        name: String,
    },
    /// Corrupt the prior channel of a dataset.
    CorruptPriors,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = cli.score_mode {
        cfg.conformal.score_mode = mode.into();
    }
    cfg.out = Some(cli.out.clone());
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<String> {
    let cfg = resolve(cli)?;
    let out = cli.out.as_path();
    let line = match &cli.command {
        Command::GenData => {
            let s = cmd_gen_data(&cfg, out)?;
            format!("gen-data: {} nodes in {} graphs", s.n_nodes, s.n_graphs)
        }
        Command::CorruptPriors => {
            let s = cmd_corrupt_priors(&cfg, out)?;
            format!(
                "corrupt-priors: {} nodes, mode {}",
                s.n_nodes,
                cfg.corruption.name()
            )
        }
        Command::Pipeline => {
            let r = cmd_pipeline(&cfg, out)?;
            let lvl = r.metrics.level(cfg.conformal.tau);
            format!(
                "pipeline: coverage {:.4} at tau {}, ece {:.4}",
                lvl.map_or(f64::NAN, |l| l.coverage),
                cfg.conformal.tau,
                r.metrics.ece
            )
        }
        Command::Bound => {
            let r = cmd_bound(&cfg, out)?;
            format!(
                "bound: {} conditions, kl {:.3}, lipschitz {:.3}",
                r.conditions.len(),
                r.kl,
                r.lipschitz
            )
        }
        Command::NcalSweep => {
            let r = cmd_ncal_sweep(&cfg, out)?;
            format!("ncal-sweep: {} sizes", r.rows.len())
        }
        Command::Active => {
            let r = cmd_active(&cfg, out)?;
            format!(
                "active: {} strategies over {} seeds, ordering {:?}",
                r.strategies.len(),
                r.seeds.len(),
                r.ordering
            )
        }
        Command::Experiment { name } => {
            cmd_experiment(name, &cfg, out)?;
            format!("experiment {name}: written to {}", out.join(name).display())
        }
    };
    Ok(line)
}

/// Parses `args` (including the program name) and runs one command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(&cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
