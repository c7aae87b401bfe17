use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ioc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ioc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn scalar_config(dir: &Path, f: &str, r: &str, gamma: f64) -> String {
    let text = format!(
        r#"{{"name": "custom", "regime": "discrete", "n": 1, "m": 1,
            "f": ["{f}"], "g": [["1"]], "R": [["{r}"]], "P": [[1.0]], "gamma": {gamma}}}"#
    );
    let path = dir.join("system.json");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn control_prints_closed_form() {
    let out = ioc(&["control", "--system", "example2-continuous", "--x", "1,2"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).trim(), "u = -2");
}

#[test]
fn q_at_origin_is_zero() {
    let out = ioc(&["q", "--system", "example1-discrete", "--x", "0,0"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).trim(), "Q = 0");
}

#[test]
fn q_json_output() {
    let out = ioc(&["q", "--system", "scalar-discrete-half", "--x", "2", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((doc["q"].as_f64().unwrap() - 3.5).abs() < 1e-12);
}

#[test]
fn list_systems_names_all_builtins() {
    let out = ioc(&["list-systems"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for name in ioc_core::system::BUILTIN_NAMES {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn verify_writes_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = ioc(&[
        "verify",
        "--system",
        "scalar-discrete-half",
        "--samples",
        "1000",
        "--seed",
        "7",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["pass"], Value::Bool(true));
    assert!(doc["reports"].as_array().unwrap().len() >= 4);
}

#[test]
fn verify_fails_on_unstable_drift() {
    let dir = tempfile::tempdir().unwrap();
    let config = scalar_config(dir.path(), "2*x1", "1", 1.0);
    let out = ioc(&["verify", "--config", &config, "--samples", "200"]);
    assert_eq!(out.status.code(), Some(1));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["pass"], Value::Bool(false));
    let nonneg = doc["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["check"] == "q-nonnegativity")
        .unwrap();
    assert_eq!(nonneg["pass"], Value::Bool(false));
    assert!(nonneg["worst_value"].as_f64().unwrap() < 0.0);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(ioc(&["control", "--x", "1,2"]).status.code(), Some(2));
    assert_eq!(
        ioc(&["control", "--system", "example2-continuous", "--x", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(
        ioc(&["control", "--system", "no-such-system", "--x", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(
        ioc(&["simulate", "--system", "scalar-continuous-neg", "--x0", "3", "--steps", "5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        ioc(&["control", "--system", "example2-continuous", "--x", "1,abc"]).status.code(),
        Some(2)
    );
}

#[test]
fn model_assumption_violations_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = scalar_config(dir.path(), "x1 + 1", "1", 1.0);
    assert_eq!(ioc(&["q", "--config", &config, "--x", "1"]).status.code(), Some(3));
    let config = scalar_config(dir.path(), "0.5*x1", "x1", 1.0);
    assert_eq!(ioc(&["control", "--config", &config, "--x", "-1"]).status.code(), Some(3));
}

#[test]
fn simulate_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    let out = ioc(&[
        "simulate",
        "--system",
        "scalar-continuous-neg",
        "--x0",
        "3",
        "--dt",
        "0.001",
        "--steps",
        "10000",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let file = std::fs::File::open(&path).unwrap();
    let traj = ioc_core::Trajectory::read_csv(file, ioc_core::Regime::Continuous).unwrap();
    assert_eq!(traj.len(), 10_001);
    let cost = traj.last().unwrap().discounted_running_cost;
    assert!((cost - 9.0).abs() < 1e-3);
}

#[test]
fn gamma_bound_for_example1() {
    let out = ioc(&["gamma-bound", "--system", "example1-discrete", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let l = doc["lipschitz"]["l_hat"].as_f64().unwrap();
    assert!(l <= 1.0 && l > 0.99);
    assert_eq!(doc["gamma_bound"].as_f64(), Some(1.0));
}

#[test]
fn overrides_change_the_law() {
    let out = ioc(&["control", "--system", "example2-continuous", "--r", "2", "--x", "1,2"]);
    assert_eq!(stdout(&out).trim(), "u = -1");
}
