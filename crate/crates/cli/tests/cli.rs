use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qbound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbound")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn check_fn_expr_soft_or() {
    let dir = tempfile::tempdir().unwrap();
    let o = qbound(&[
        "check-fn",
        "--expr",
        "max(x1,x2)",
        "--regime",
        "soft",
        "--beta",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "convex-conditions");
    assert!(dir.path().join("condition_report.json").is_file());
}

#[test]
fn check_fn_flags_invalid_function() {
    let dir = tempfile::tempdir().unwrap();
    let o = qbound(&["check-fn", "--expr", "x1*x1 + 1", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "neither");
}

#[test]
fn bound_writes_report_and_prints_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("or_task.json");
    let o = qbound(&["bound", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("gap_max "));
    assert!(stdout(&o).contains("bounds hold"));
    let text = std::fs::read_to_string(dir.path().join("bound_report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["verification"]["pass"], true);
}

#[test]
fn solve_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("solve.json");
    let o = qbound(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("solve.json").is_file());
}

#[test]
fn missing_config_exits_1_with_path() {
    let o = qbound(&["bound", "--config", "/no/such/config.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/config.json"));
}

#[test]
fn unknown_flag_exits_1() {
    let o = qbound(&["bound", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_exits_0() {
    assert_eq!(qbound(&["--help"]).status.code(), Some(0));
}

#[test]
fn wrong_experiment_kind_exits_1() {
    let cfg = configs().join("or_task.json");
    let o = qbound(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn non_convergence_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let text = format!(
        r#"{{
  "experiment": "solve",
  "environment": {{"kind": "grids", "files": ["{}"], "params": {{"penalty_reward": -100.0}}}},
  "max_iters": 3,
  "seed": 0
}}"#,
        fixture("grid6_l.txt")
    );
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let o = qbound(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn seed_and_tol_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("or_task.json");
    let a = dir.path().join("a");
    let o = qbound(&[
        "bound",
        "--config",
        cfg.to_str().unwrap(),
        "--tol",
        "1e-12",
        "--seed",
        "9",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("bound_report.json")).unwrap()).unwrap();
    assert_eq!(v["report"]["tol"].as_f64(), Some(1e-12));
    let bad = qbound(&["bound", "--config", cfg.to_str().unwrap(), "--tol", "-1"]);
    assert_eq!(bad.status.code(), Some(1));
}
