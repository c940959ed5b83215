use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_robustutil"));
    c.env_remove("ROBUSTUTIL_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn bs_scenario(dir: &Path) -> String {
    let p = dir.join("bs.json").display().to_string();
    let out = run(&["gen-scenario", "--out", &p]);
    assert!(out.status.success());
    p
}

#[test]
fn solve_reproduces_closed_form_with_exact_schema() {
    let dir = tempfile::tempdir().unwrap();
    let scen = bs_scenario(dir.path());
    let out = run(&["solve", "--scenario", &scen, "--utility", "power:0.5", "--wealth", "1.0"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&out);
    let keys: Vec<&String> = doc.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["config", "diagnostics", "solution", "version"]);
    let sol = &doc["solution"];
    for k in ["x", "y_hat", "u", "v_at_y_hat", "Z_hat", "X_hat"] {
        assert!(!sol[k].is_null(), "missing {k}");
    }
    assert!((sol["u"].as_f64().unwrap() - 2.034904).abs() < 1e-6);
    assert_eq!(sol["Z_hat"].as_array().unwrap().len(), 64);
    for k in ["kkt", "budget_residual", "iterations", "wall_time_ms"] {
        assert!(!doc["diagnostics"][k].is_null(), "missing diagnostics.{k}");
    }
}

#[test]
fn output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scen = bs_scenario(dir.path());
    let a = run(&["solve", "--scenario", &scen]);
    let b = run(&["solve", "--scenario", &scen]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn missing_scenario_is_an_input_error() {
    let out = run(&["solve", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/scenario.json"));
    let out = run(&["solve"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_utility_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let scen = bs_scenario(dir.path());
    let out = run(&["solve", "--scenario", &scen, "--utility", "power:1.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infeasible_bound_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write(
        dir.path(),
        "bad.json",
        r#"{"probs":[0.5,0.5],"observables":{"h":[0,2]},
            "constraints":[{"observable":"h","kind":"ge","bound":3}]}"#,
    );
    let out = run(&["solve", "--scenario", &scen]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["feasibility", "--scenario", &scen]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["feasibility"]["feasible"], Value::Bool(false));
}

#[test]
fn verify_bs_passes_and_rejects_regime() {
    let out = run(&["verify-bs", "--sigma", "0.5", "--T", "1", "--A", "1.1", "--wealth", "1", "--nodes", "64"]);
    assert_eq!(out.status.code(), Some(0));
    let v = &json(&out)["verification"];
    assert_eq!(v["pass"], Value::Bool(true));
    assert!(v["max_rel_error"].as_f64().unwrap() <= 1e-3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("PASS"));

    let out = run(&["verify-bs", "--nodes", "256"]);
    assert_eq!(out.status.code(), Some(0));
    let v = &json(&out)["verification"];
    assert_eq!(v["tolerance"].as_f64(), Some(1e-4));
    assert!(v["max_rel_error"].as_f64().unwrap() <= 1e-4);

    let out = run(&["verify-bs", "--A", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("outside explicit-solution regime"));
}

#[test]
fn norms_of_constant_density() {
    let out = run(&["norms", "--nodes", "16"]);
    assert!(out.status.success());
    let n = &json(&out)["norms"]["ones"];
    assert!((n["luxemburg"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((n["amemiya"].as_f64().unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn vcurve_unconstrained() {
    let out = run(&["vcurve", "--y", "0.5,1,2"]);
    assert!(out.status.success());
    let v = json(&out)["vcurve"]["v"].clone();
    let v: Vec<f64> = v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    for (got, want) in v.iter().zip([2.0, 1.0, 0.5]) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn csv_has_one_row_per_state() {
    let dir = tempfile::tempdir().unwrap();
    let scen = bs_scenario(dir.path());
    let out = run(&["solve", "--scenario", &scen, "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# x="));
    assert_eq!(lines.next().unwrap(), "state_index,prob,S_T,Z_hat,X_hat");
    assert_eq!(lines.count(), 64);
}

#[test]
fn minimax_on_generated_random_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rand.json").display().to_string();
    let out = run(&["gen-scenario", "--kind", "random", "--states", "3", "--densities", "2", "--seed", "5", "--out", &p]);
    assert!(out.status.success());
    let out = run(&["minimax", "--scenario", &p]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = &json(&out)["minimax"];
    assert!(m["gap"].as_f64().unwrap().abs() <= 1e-4);
    assert!(m["grid_value"].is_number());
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.json");
    let out = run(&["vcurve", "--y", "1", "--out", p.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(doc["config"]["command"], "vcurve");
}
