use std::path::Path;
use std::process::{Command, Output};

use divscale_cli::output::read_records;

fn divscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_divscale"))
        .args(args)
        .output()
        .unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("run.json");
    std::fs::write(
        &path,
        r#"{"synthetic_length": 300, "context_length": 48, "horizon": 12, "stride": 60, "max_windows": 2, "budgets": [1, 2], "max_budget": 2}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn missing_dataset_exits_3() {
    let out = divscale(&["scale-sweep", "--dataset", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/data.csv"));
}

#[test]
fn bad_budgets_exit_1() {
    assert_eq!(divscale(&["scale-sweep", "--budgets", "1,x"]).status.code(), Some(1));
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"horizn": 12}"#).unwrap();
    let out = divscale(&["scale-sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizn"));
}

#[test]
fn backend_version_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let backend = format!("external:{} mock-backend --proto 2", env!("CARGO_BIN_EXE_divscale"));
    let out = divscale(&[
        "validate-backend",
        "--backend",
        &backend,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let from_file = dir.path().join("file");
    let from_flag = dir.path().join("flag");
    for (out, extra) in [(&from_file, vec![]), (&from_flag, vec!["--context-length", "64"])] {
        let mut args = vec!["scale-sweep", "--config", &config, "--out", out.to_str().unwrap()];
        args.extend(extra);
        assert_eq!(divscale(&args).status.code(), Some(0));
    }
    let file_rows = read_records(&from_file.join("records.csv")).unwrap();
    let flag_rows = read_records(&from_flag.join("records.csv")).unwrap();
    assert!(file_rows.iter().all(|r| r.context_length == 48));
    assert!(flag_rows.iter().all(|r| r.context_length == 64));
    // 1 config x 1 trial x 2 windows x 2 budgets x 2 aggregators
    assert_eq!(file_rows.len(), 8);
}

#[test]
fn theory_reports_crossover() {
    let dir = tempfile::tempdir().unwrap();
    let out = divscale(&["theory", "--trials", "20000", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("N* = 3.0801"), "{stdout}");
    assert!(dir.path().join("theory.csv").exists());
}

#[test]
fn short_context_for_period_is_recorded_as_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("ctx.json");
    std::fs::write(
        &config,
        r#"{"synthetic_length": 400, "horizon": 12, "stride": 100, "max_windows": 2, "budgets": [1, 2], "max_budget": 2,
            "sweep": "context_length", "context_grid": [32, 96],
            "perturbations": [{"kind": "sensitivity", "params": {"period": 24}}]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let res = divscale(&[
        "scale-sweep",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = read_records(&out.join("records.csv")).unwrap();
    assert!(rows.iter().filter(|r| r.context_length == 32).all(|r| r.is_error()));
    assert!(rows.iter().filter(|r| r.context_length == 96).all(|r| !r.is_error()));
}
