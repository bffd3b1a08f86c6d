use std::path::Path;
use std::process::{Command, Output};

fn calpro(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calpro"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.json");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

const SMALL: &str =
    r#"{"generator": {"n_chains": 12}, "train": {"max_epochs": 20, "patience": 10}}"#;

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn gen_data_writes_dataset_csv_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = calpro(
        &["--config", &cfg, "--seed", "3", "--out", "o", "gen-data"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let o = tmp.path().join("o");
    let ds = calpro::data::load_dataset(o.join("dataset.json")).unwrap();
    assert_eq!(ds.n_graphs(), 12);
    let prov = ds.metadata.provenance.clone().unwrap();
    assert_eq!(prov.seed, 3);
    let csv = read(o.join("nodes.csv"));
    assert_eq!(csv.lines().next().unwrap(), prov.csv_comment());
    let summary: serde_json::Value = serde_json::from_str(&read(o.join("summary.json"))).unwrap();
    assert_eq!(summary["config_hash"], prov.config_hash.as_str());
    assert_eq!(summary["report"]["n_nodes"], ds.len());
}

#[test]
fn flags_override_config_and_echo_omits_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = calpro(
        &[
            "--config",
            &cfg,
            "--seed",
            "9",
            "--score-mode",
            "absolute",
            "--out",
            "o",
            "pipeline",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let o = tmp.path().join("o");
    let echo: serde_json::Value = serde_json::from_str(&read(o.join("config.json"))).unwrap();
    assert_eq!(echo["report"]["seed"], 9);
    assert_eq!(echo["report"]["conformal"]["score_mode"], "absolute");
    assert!(echo["report"].get("out").is_none());
    let metrics: serde_json::Value = serde_json::from_str(&read(o.join("metrics.json"))).unwrap();
    assert_eq!(metrics["report"]["metrics"]["method"], "conformal_absolute");
    for f in [
        "head.json",
        "calibration.json",
        "intervals.csv",
        "calibration_curve.csv",
    ] {
        assert!(o.join(f).exists(), "{f} missing");
    }
    let head: serde_json::Value = serde_json::from_str(&read(o.join("head.json"))).unwrap();
    assert_eq!(head["provenance"]["seed"], 9);
}

#[test]
fn output_dir_does_not_change_the_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    for d in ["a", "b"] {
        assert!(
            calpro(&["--config", &cfg, "--out", d, "gen-data"], tmp.path())
                .status
                .success()
        );
    }
    assert_eq!(
        read(tmp.path().join("a/summary.json")),
        read(tmp.path().join("b/summary.json"))
    );
    assert!(calpro(
        &["--config", &cfg, "--seed", "1", "--out", "c", "gen-data"],
        tmp.path()
    )
    .status
    .success());
    assert_ne!(
        read(tmp.path().join("a/summary.json")),
        read(tmp.path().join("c/summary.json"))
    );
}

#[test]
fn config_errors_name_the_field_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "{\n  \"seed\": 1,\n  \"trian\": {}\n}");
    let out = calpro(&["--config", &cfg, "gen-data"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("trian") && err.contains("line 3"), "{err}");

    let cfg = write_config(tmp.path(), r#"{"train": {"head": {"widths": [4]}}}"#);
    let err = String::from_utf8_lossy(&calpro(&["--config", &cfg, "gen-data"], tmp.path()).stderr)
        .into_owned();
    assert!(err.contains("head"), "{err}");

    let cfg = write_config(tmp.path(), r#"{"generator": {"informativeness_eta": 1.5}}"#);
    let err = String::from_utf8_lossy(&calpro(&["--config", &cfg, "gen-data"], tmp.path()).stderr)
        .into_owned();
    assert!(err.contains("informativeness_eta"), "{err}");
}

#[test]
fn failures_carry_the_stage_name() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"dataset": "missing.json"}"#);
    let out = calpro(&["--config", &cfg, "--out", "o", "pipeline"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.starts_with("error: data:") && err.contains("missing.json"),
        "{err}"
    );

    let cfg = write_config(tmp.path(), r#"{"dataset_kind": "tabular"}"#);
    let err = String::from_utf8_lossy(
        &calpro(&["--config", &cfg, "--out", "o", "bound"], tmp.path()).stderr,
    )
    .into_owned();
    assert!(err.contains("dataset_kind"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        calpro(&["experiment", "nope"], tmp.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        calpro(&["--score-mode", "relative", "gen-data"], tmp.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(calpro(&["frobnicate"], tmp.path()).status.code(), Some(2));
    assert!(calpro(&["--help"], tmp.path()).status.success());
}

#[test]
fn corrupt_priors_reads_a_dataset_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    assert!(
        calpro(&["--config", &cfg, "--out", "src", "gen-data"], tmp.path())
            .status
            .success()
    );
    let cfg = write_config(
        tmp.path(),
        r#"{"dataset": "src/dataset.json", "corruption": "invert"}"#,
    );
    let out = calpro(
        &["--config", &cfg, "--out", "bad", "corrupt-priors"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = calpro::data::load_dataset(tmp.path().join("src/dataset.json")).unwrap();
    let b = calpro::data::load_dataset(tmp.path().join("bad/dataset.json")).unwrap();
    for (x, y) in a.nodes.iter().zip(&b.nodes) {
        assert!((x.prior_b + y.prior_b - 1.0).abs() < 1e-12);
        assert_eq!(x.target_y, y.target_y);
    }
    assert!(b.metadata.history.iter().any(|h| h.contains("invert")));
}

#[test]
fn experiment_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"seed": 4, "generator": {"n_chains": 16}, "experiment": {"seeds": [0, 2], "corruptions": ["shuffle"]}}"#,
    );
    let out = calpro(
        &["--config", &cfg, "--out", "o", "experiment", "corruption"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let d = tmp.path().join("o/corruption");
    let spec: serde_json::Value = serde_json::from_str(&read(d.join("spec.json"))).unwrap();
    assert_eq!(spec["report"]["seeds"], serde_json::json!([4, 6]));
    for s in [4, 6] {
        let v: serde_json::Value =
            serde_json::from_str(&read(d.join(format!("seeds/seed_{s}.json")))).unwrap();
        assert!(v["report"]
            .as_array()
            .unwrap()
            .iter()
            .all(|r| r["seed"] == s));
    }
    let table = read(d.join("table.csv"));
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("# artifact=calpro/"));
    assert_eq!(
        lines.next().unwrap(),
        "mode,coverage,degradation,sharpness,ece"
    );
    assert_eq!(lines.count(), 2);
}
