use std::path::{Path, PathBuf};

use serde::Serialize;

use super::RunConfig;
use crate::active::{compare_strategies, curve_rows, ActiveComparison, CURVE_HEADER};
use crate::bounds::{bound_vs_empirical_sweep, BoundReport, NcalSweep, Shifted, SweepContext};
use crate::conformal::calibrate;
use crate::data::{
    corrupt_priors, gen_chain_dataset, gen_tabular_dataset, load_dataset, perturb, write_nodes_csv,
    Dataset, DatasetKind, Split,
};
use crate::error::{Error, Result};
use crate::experiments::{self as exp, csv_table, fmt_num, ExperimentSpec};
use crate::head::{head_to_json_with_provenance, risk_probability};
use crate::metrics::{evaluate, write_curve_csv, IntervalMethod, MetricsReport};
use crate::report::{Envelope, Provenance};
use crate::trainer::{train, TrainRecord};

/// Single-writer view of one output directory.
pub struct OutDir {
    root: PathBuf,
    provenance: Provenance,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path, provenance: Provenance) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            provenance,
            written: Vec::new(),
        })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, report: &T) -> Result<PathBuf> {
        let mut text = Envelope::new(self.provenance.clone(), report).to_json_pretty()?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<PathBuf> {
        let text = csv_table(&self.provenance.csv_comment(), header, rows);
        self.write_text(name, &text)
    }
}

fn out_dir(cfg: &RunConfig, out: &Path) -> Result<OutDir> {
    let mut dir = OutDir::create(out, Provenance::new(cfg, cfg.seed)?)?;
    dir.write_json("config.json", cfg)?;
    Ok(dir)
}

fn generate(cfg: &RunConfig) -> Result<Dataset> {
    let g = cfg.effective_generator();
    match cfg.dataset_kind {
        DatasetKind::Chain => gen_chain_dataset(&g),
        DatasetKind::Tabular => gen_tabular_dataset(&g),
    }
}

fn input_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset {
        Some(path) => load_dataset(path),
        None => generate(cfg),
    }
}

fn write_dataset(dir: &mut OutDir, mut ds: Dataset) -> Result<Dataset> {
    ds.metadata.provenance = Some(dir.provenance().clone());
    dir.write_text("dataset.json", &crate::data::to_json_string(&ds)?)?;
    let mut csv = dir.provenance().csv_comment().into_bytes();
    csv.push(b'\n');
    write_nodes_csv(&ds, &mut csv).map_err(|e| Error::io("nodes.csv", e))?;
    dir.write_text("nodes.csv", &String::from_utf8(csv).expect("ascii csv"))?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_graphs: usize,
    pub split_counts: [usize; 3],
    pub disordered_fraction: f64,
    pub mean_target_ordered: Option<f64>,
    pub mean_target_disordered: Option<f64>,
    pub history: Vec<String>,
}

pub fn summarize(ds: &Dataset) -> DatasetSummary {
    let mean_where = |flag: bool| {
        let v: Vec<f64> = ds
            .nodes
            .iter()
            .filter(|n| n.disorder_flag == flag)
            .map(|n| n.target_y)
            .collect();
        (!v.is_empty()).then(|| crate::numerics::mean(&v))
    };
    DatasetSummary {
        n_nodes: ds.len(),
        n_edges: ds.edges.len(),
        n_graphs: ds.n_graphs(),
        split_counts: [Split::Train, Split::Calibration, Split::Test].map(|s| ds.nodes_in(s).len()),
        disordered_fraction: ds.nodes.iter().filter(|n| n.disorder_flag).count() as f64
            / ds.len().max(1) as f64,
        mean_target_ordered: mean_where(false),
        mean_target_disordered: mean_where(true),
        history: ds.metadata.history.clone(),
    }
}

/// Writes `dataset.json`, `nodes.csv` and `summary.json`.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<DatasetSummary> {
    let mut dir = out_dir(cfg, out)?;
    let ds = generate(cfg).map_err(|e| e.in_stage("gen-data"))?;
    let ds = write_dataset(&mut dir, ds)?;
    let summary = summarize(&ds);
    dir.write_json("summary.json", &summary)?;
    Ok(summary)
}

/// Applies `cfg.corruption` to the input dataset.
pub fn cmd_corrupt_priors(cfg: &RunConfig, out: &Path) -> Result<DatasetSummary> {
    let mut dir = out_dir(cfg, out)?;
    let ds = input_dataset(cfg).map_err(|e| e.in_stage("load"))?;
    let ds =
        corrupt_priors(&ds, cfg.corruption, cfg.seed).map_err(|e| e.in_stage("corrupt-priors"))?;
    let ds = write_dataset(&mut dir, ds)?;
    let summary = summarize(&ds);
    dir.write_json("summary.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskSummary {
    pub threshold: f64,
    pub n_flagged: usize,
    pub n_positive: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub metrics: MetricsReport,
    pub risk: RiskSummary,
    pub train: TrainRecord,
}

/// Train, calibrate, build intervals, evaluate and flag risk on one dataset.
pub fn cmd_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineReport> {
    let mut dir = out_dir(cfg, out)?;
    let ds = input_dataset(cfg).map_err(|e| e.in_stage("data"))?;
    let tcfg = cfg.effective_train();
    let model = train(&tcfg, &ds).map_err(|e| e.in_stage("train"))?;
    let output = model.head.predict(&ds).map_err(|e| e.in_stage("predict"))?;
    let preds = output.nig;
    let levels = &cfg.conformal.levels;
    let calib = calibrate(&preds, &ds, levels, cfg.conformal.score_mode)
        .map_err(|e| e.in_stage("calibrate"))?;
    let test = ds.nodes_in(Split::Test);
    let metrics = evaluate(IntervalMethod::Conformal(&calib), &preds, &ds, &test)
        .map_err(|e| e.in_stage("evaluate"))?;

    let threshold = tcfg.risk_threshold;
    let probs: Vec<f64> = test
        .iter()
        .map(|&i| risk_probability(output.risk_logit[i]))
        .collect();
    let flagged: Vec<bool> = probs.iter().map(|&p| p > 0.5).collect();
    let positive: Vec<bool> = test
        .iter()
        .map(|&i| ds.nodes[i].target_y > threshold)
        .collect();
    let tp = flagged
        .iter()
        .zip(&positive)
        .filter(|(f, p)| **f && **p)
        .count();
    let n_flagged = flagged.iter().filter(|f| **f).count();
    let n_positive = positive.iter().filter(|p| **p).count();
    let risk = RiskSummary {
        threshold,
        n_flagged,
        n_positive,
        precision: (n_flagged > 0).then(|| tp as f64 / n_flagged as f64),
        recall: (n_positive > 0).then(|| tp as f64 / n_positive as f64),
    };

    dir.write_text(
        "head.json",
        &head_to_json_with_provenance(&model.head, Some(dir.provenance()))?,
    )?;
    dir.write_json("calibration.json", &calib)?;
    let p_test: Vec<_> = test.iter().map(|&i| preds[i]).collect();
    let per_level = levels
        .iter()
        .map(|&t| calib.intervals(&p_test, t))
        .collect::<Result<Vec<_>>>()?;
    let mut header = vec![
        "node_id".to_string(),
        "target_y".into(),
        "mu".into(),
        "variance".into(),
    ];
    for t in levels {
        header.push(format!("lo_{t}"));
        header.push(format!("hi_{t}"));
    }
    header.extend(["risk_probability".into(), "risk_flag".into()]);
    let rows = test.iter().enumerate().map(|(k, &i)| {
        let mut r = vec![
            i.to_string(),
            ds.nodes[i].target_y.to_string(),
            preds[i].mu.to_string(),
            preds[i].predictive_variance().to_string(),
        ];
        for iv in &per_level {
            r.push(iv[k].lo.to_string());
            r.push(iv[k].hi.to_string());
        }
        r.push(probs[k].to_string());
        r.push(flagged[k].to_string());
        r
    });
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    dir.write_csv("intervals.csv", &header_refs, rows)?;
    let mut curve = dir.provenance().csv_comment().into_bytes();
    curve.push(b'\n');
    write_curve_csv(&metrics.calibration_curve, &mut curve)
        .map_err(|e| Error::io("calibration_curve.csv", e))?;
    dir.write_text(
        "calibration_curve.csv",
        &String::from_utf8(curve).expect("ascii csv"),
    )?;
    let report = PipelineReport {
        metrics,
        risk,
        train: model.record,
    };
    dir.write_json("metrics.json", &report)?;
    Ok(report)
}

fn chain_source(cfg: &RunConfig) -> Result<Dataset> {
    if cfg.dataset_kind != DatasetKind::Chain {
        return Err(Error::config(
            "dataset_kind",
            "this command needs chain data",
        ));
    }
    gen_chain_dataset(&cfg.effective_generator()).map_err(|e| e.in_stage("generate"))
}

/// Bound against empirical coverage along the configured shift series.
pub fn cmd_bound(cfg: &RunConfig, out: &Path) -> Result<BoundReport> {
    let mut dir = out_dir(cfg, out)?;
    let ds = chain_source(cfg)?;
    let model = train(&cfg.effective_train(), &ds).map_err(|e| e.in_stage("train"))?;
    let preds = model.predict(&ds)?;
    let calib = calibrate(&preds, &ds, &cfg.conformal.levels, cfg.conformal.score_mode)
        .map_err(|e| e.in_stage("calibrate"))?;
    let kind = cfg.bounds.shift_kind;
    let conditions = cfg
        .bounds
        .magnitudes
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let d = if m == 0.0 {
                ds.clone()
            } else {
                perturb(&ds, kind, m, cfg.seed.wrapping_add(k as u64 + 1))?
            };
            let p = model.predict(&d)?;
            Ok((m, d, p))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("shift"))?;
    let series: Vec<Shifted> = conditions
        .iter()
        .map(|(m, d, p)| Shifted {
            label: format!("{}:{m}", kind.name()),
            magnitude: *m,
            data: d,
            preds: p,
        })
        .collect();
    let ctx = SweepContext {
        weights: &model.head.weights,
        calib: &calib,
        reference: &ds,
        reference_preds: &preds,
        cal_nodes: &ds.nodes_in(Split::Calibration),
        test_nodes: &ds.nodes_in(Split::Test),
    };
    let report = bound_vs_empirical_sweep(&ctx, &series, &cfg.bound_settings())
        .map_err(|e| e.in_stage("bound"))?;
    dir.write_json("bound.json", &report)?;
    dir.write_csv(
        "bound_curve.csv",
        &[
            "label",
            "magnitude",
            "epsilon",
            "bound",
            "bound_raw",
            "vacuous",
            "empirical",
            "conservative",
        ],
        report.conditions.iter().map(|c| {
            vec![
                c.label.clone(),
                c.magnitude.to_string(),
                c.epsilon.to_string(),
                c.bound.value.to_string(),
                c.bound.raw.to_string(),
                c.bound.vacuous.to_string(),
                c.empirical.to_string(),
                c.conservative.to_string(),
            ]
        }),
    )?;
    Ok(report)
}

/// Calibration-size sweep for the global seed.
pub fn cmd_ncal_sweep(cfg: &RunConfig, out: &Path) -> Result<NcalSweep> {
    let mut dir = out_dir(cfg, out)?;
    chain_source(cfg)?;
    let spec = ExperimentSpec {
        seeds: vec![cfg.seed],
        ..cfg.experiment_spec("ncal")
    };
    let sweep = exp::run_ncal_experiment(&spec)
        .map_err(|e| e.in_stage("ncal-sweep"))?
        .per_seed
        .remove(0)
        .1;
    dir.write_json("ncal.json", &sweep)?;
    dir.write_csv(
        "ncal.csv",
        &["n_cal", "bound", "bound_raw", "vacuous", "empirical", "gap"],
        sweep.rows.iter().map(|r| {
            vec![
                r.n_cal.to_string(),
                r.bound.value.to_string(),
                r.bound.raw.to_string(),
                r.bound.vacuous.to_string(),
                r.empirical.to_string(),
                r.gap.to_string(),
            ]
        }),
    )?;
    Ok(sweep)
}

/// Strategy comparison on one generated pool.
pub fn cmd_active(cfg: &RunConfig, out: &Path) -> Result<ActiveComparison> {
    let mut dir = out_dir(cfg, out)?;
    let pool = chain_source(cfg)?;
    let cmp = compare_strategies(&pool, &cfg.active_configs(), &cfg.active_seeds())
        .map_err(|e| e.in_stage("active"))?;
    dir.write_json("active.json", &cmp)?;
    dir.write_csv(
        "active_curves.csv",
        &CURVE_HEADER,
        cmp.curves.iter().flat_map(curve_rows),
    )?;
    Ok(cmp)
}

pub const EXPERIMENTS: [&str; 7] = [
    "calibration",
    "efficiency",
    "shift",
    "perturbation",
    "corruption",
    "bound",
    "ncal",
];

/// Per-seed files plus an aggregated table for one recipe.
fn write_experiment<R: Serialize, Row: Serialize>(
    dir: &mut OutDir,
    report: &R,
    seeds: &[u64],
    per_seed: impl Fn(u64) -> Vec<Row>,
    header: &[&str],
    table: Vec<Vec<String>>,
) -> Result<()> {
    dir.write_json("report.json", report)?;
    for &s in seeds {
        dir.write_json(&format!("seeds/seed_{s}.json"), &per_seed(s))?;
    }
    dir.write_csv("table.csv", header, table)?;
    Ok(())
}

/// Runs a named recipe into `out/<name>/`; returns the report as JSON.
pub fn cmd_experiment(name: &str, cfg: &RunConfig, out: &Path) -> Result<serde_json::Value> {
    if !EXPERIMENTS.contains(&name) {
        return Err(Error::config(
            "experiment",
            format!("unknown experiment `{name}`; expected one of {EXPERIMENTS:?}"),
        ));
    }
    chain_source(cfg)?;
    let spec = cfg.experiment_spec(name);
    let mut dir = out_dir(cfg, &out.join(name))?;
    dir.write_json("spec.json", &spec)?;
    let seeds = spec.seeds.clone();
    let stage = |e: Error| e.in_stage(format!("experiment {name}"));
    let value = match name {
        "calibration" => {
            let r = exp::run_calibration_experiment(&spec).map_err(stage)?;
            let table = r
                .summary
                .iter()
                .map(|s| {
                    [
                        s.median_coverage,
                        s.median_deviation,
                        s.median_sharpness,
                        s.median_ece,
                        s.median_spearman,
                    ]
                    .iter()
                    .map(|v| fmt_num(*v))
                    .fold(vec![s.ablation.name().to_string()], |mut v, x| {
                        v.push(x);
                        v
                    })
                })
                .collect();
            let rows = |s: u64| {
                r.rows
                    .iter()
                    .filter(|x| x.seed == s)
                    .cloned()
                    .collect::<Vec<_>>()
            };
            write_experiment(
                &mut dir,
                &r,
                &seeds,
                rows,
                &[
                    "configuration",
                    "coverage",
                    "deviation",
                    "sharpness",
                    "ece",
                    "spearman",
                ],
                table,
            )?;
            serde_json::to_value(&r)
        }
        "efficiency" => {
            let r = exp::run_efficiency_experiment(&spec).map_err(stage)?;
            let table = r
                .rows
                .iter()
                .map(|x| {
                    vec![
                        x.seed.to_string(),
                        fmt_num(x.full_coverage),
                        fmt_num(x.vanilla_coverage),
                        fmt_num(x.full_stable_width),
                        fmt_num(x.vanilla_stable_width),
                        fmt_num(x.width_ratio),
                        x.matched.to_string(),
                    ]
                })
                .collect();
            let rows = |s: u64| {
                r.rows
                    .iter()
                    .filter(|x| x.seed == s)
                    .cloned()
                    .collect::<Vec<_>>()
            };
            write_experiment(
                &mut dir,
                &r,
                &seeds,
                rows,
                &[
                    "seed",
                    "full_coverage",
                    "vanilla_coverage",
                    "full_stable_width",
                    "vanilla_stable_width",
                    "width_ratio",
                    "matched",
                ],
                table,
            )?;
            serde_json::to_value(&r)
        }
        "shift" => {
            let r = exp::run_shift_experiment(&spec).map_err(stage)?;
            let table = r
                .summary
                .iter()
                .map(|s| {
                    vec![
                        s.ablation.name().to_string(),
                        fmt_num(s.magnitude),
                        fmt_num(s.median_coverage),
                        fmt_num(s.median_degradation),
                        fmt_num(s.median_sharpness),
                    ]
                })
                .collect();
            let rows = |s: u64| {
                r.rows
                    .iter()
                    .filter(|x| x.seed == s)
                    .cloned()
                    .collect::<Vec<_>>()
            };
            write_experiment(
                &mut dir,
                &r,
                &seeds,
                rows,
                &[
                    "configuration",
                    "magnitude",
                    "coverage",
                    "degradation",
                    "sharpness",
                ],
                table,
            )?;
            serde_json::to_value(&r)
        }
        "perturbation" => {
            let r = exp::run_perturbation_correlation(&spec).map_err(stage)?;
            let table = r
                .summary
                .iter()
                .map(|(a, k, m)| vec![a.name().to_string(), k.clone(), fmt_num(*m)])
                .collect();
            let rows = |s: u64| {
                r.rows
                    .iter()
                    .filter(|x| x.seed == s)
                    .cloned()
                    .collect::<Vec<_>>()
            };
            write_experiment(
                &mut dir,
                &r,
                &seeds,
                rows,
                &["configuration", "perturbation", "spearman"],
                table,
            )?;
            serde_json::to_value(&r)
        }
        "corruption" => {
            let r = exp::run_prior_corruption(&spec).map_err(stage)?;
            let table = r
                .summary
                .iter()
                .map(|s| {
                    vec![
                        s.mode.clone(),
                        fmt_num(s.median_coverage),
                        fmt_num(s.median_degradation),
                        fmt_num(s.median_sharpness),
                        fmt_num(s.median_ece),
                    ]
                })
                .collect();
            let rows = |s: u64| {
                r.rows
                    .iter()
                    .filter(|x| x.seed == s)
                    .cloned()
                    .collect::<Vec<_>>()
            };
            write_experiment(
                &mut dir,
                &r,
                &seeds,
                rows,
                &["mode", "coverage", "degradation", "sharpness", "ece"],
                table,
            )?;
            serde_json::to_value(&r)
        }
        "bound" => {
            let r = exp::run_bound_experiment(&spec).map_err(stage)?;
            let table = r
                .summary
                .iter()
                .map(|s| {
                    vec![
                        fmt_num(s.magnitude),
                        fmt_num(s.median_epsilon),
                        fmt_num(s.median_bound),
                        fmt_num(s.median_bound_raw),
                        fmt_num(s.median_empirical),
                        fmt_num(s.conservative_fraction),
                    ]
                })
                .collect();
            let rows = |s: u64| {
                r.per_seed
                    .iter()
                    .filter(|x| x.0 == s)
                    .map(|x| x.1.clone())
                    .collect::<Vec<_>>()
            };
            write_experiment(
                &mut dir,
                &r,
                &seeds,
                rows,
                &[
                    "magnitude",
                    "epsilon",
                    "bound",
                    "bound_raw",
                    "empirical",
                    "conservative_fraction",
                ],
                table,
            )?;
            serde_json::to_value(&r)
        }
        _ => {
            let r = exp::run_ncal_experiment(&spec).map_err(stage)?;
            let table = r
                .summary
                .iter()
                .map(|s| {
                    vec![
                        s.n_cal.to_string(),
                        fmt_num(s.median_bound),
                        fmt_num(s.median_bound_raw),
                        fmt_num(s.median_empirical),
                        fmt_num(s.median_gap),
                    ]
                })
                .collect();
            let rows = |s: u64| {
                r.per_seed
                    .iter()
                    .filter(|x| x.0 == s)
                    .map(|x| x.1.clone())
                    .collect::<Vec<_>>()
            };
            write_experiment(
                &mut dir,
                &r,
                &seeds,
                rows,
                &["n_cal", "bound", "bound_raw", "empirical", "gap"],
                table,
            )?;
            serde_json::to_value(&r)
        }
    };
    value.map_err(|e| Error::Parse {
        offset: 0,
        message: e.to_string(),
    })
}
