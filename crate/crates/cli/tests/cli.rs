use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_wedge-solver");

const CASE1: &str = r#"{
  "reduced": { "R": 0.5, "b1": 0.25, "b2": 1.75, "b3": 0.85, "xi": 0.1 },
  "position": { "x": 0.6, "y": 1.0, "theta": 0.4 }
}"#;

const MARKET: &str = r#"{
  "market": {
    "r": 0.02, "mu": 0.06, "sigma": 0.3, "alpha": 0.05, "eta": 0.4,
    "rho": 0.2, "delta": 0.05, "R": 0.5, "lambda": 0.05, "gamma": 0.05
  },
  "position": { "x": 0.6, "y": 1.0, "theta": 0.4 },
  "simulation": { "dt": 0.01, "paths": 64, "seed": 7, "horizon": 5.0 }
}"#;

fn params(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("WEDGE_SOLVER_THREADS", "2").output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn classify_reports_case_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = params(dir.path(), "c.json", CASE1);
    let v = json(&run(&["classify", "--params", p.to_str().unwrap()]));
    assert_eq!(v["tool"], "wedge-solver");
    assert_eq!(v["result"]["label"], "Case1-W");
    assert_eq!(v["config"]["reduced"]["b3"], 0.85);

    let p3 = params(dir.path(), "c3.json", r#"{"reduced": {"R": 0.5, "b1": 0.25, "b2": 1.75, "b3": 1.05, "xi": 1.0}}"#);
    let v = json(&run(&["classify", "--params", p3.to_str().unwrap()]));
    assert_eq!(v["result"]["label"], "Case3-CW");
    assert!(v["result"]["report"]["xi_bar"].as_f64().unwrap() > 0.0);
}

#[test]
fn solve_writes_boundaries_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = params(dir.path(), "m.json", MARKET);
    let out = dir.path().join("out");
    let v = json(&run(&["solve", "--params", p.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let r = &v["result"];
    assert!(r["q_star"].as_f64().unwrap() < r["q_upper"].as_f64().unwrap());
    assert!(r["cost_consistency"].as_f64().unwrap().abs() < 1e-8);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(out.join("boundaries.json")).unwrap()).unwrap();
    assert_eq!(written, v);

    let csv = std::fs::read_to_string(out.join("path.csv")).unwrap();
    assert!(csv.starts_with("# wedge-solver "));
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "q,n,dn,I,dI,p");
    let first: Vec<f64> = rows[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert!((first[0] - r["q_star"].as_f64().unwrap()).abs() < 1e-15);
    let last: Vec<f64> = rows.last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((last[5] - r["p_upper"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn sweep_marks_unposed_points() {
    let dir = tempfile::tempdir().unwrap();
    let p = params(dir.path(), "c.json", CASE1);
    let out = dir.path().join("s");
    let o = run(&["sweep", "--params", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "--grid", "b3:lin:0.8:1.3:4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "b3,case,q_star,q_upper,p_star,p_upper,certainty_equivalent,reason");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].ends_with(','));
    assert!(rows[4].contains("NaN") && rows[4].contains("critical value"));
}

#[test]
fn sweep_over_starting_points_writes_paths() {
    let dir = tempfile::tempdir().unwrap();
    let p = params(dir.path(), "c.json", CASE1);
    let out = dir.path().join("u");
    let o = run(&["sweep", "--params", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "--grid", "u:lin:0.1:0.3:3"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("paths.csv")).unwrap();
    let us: std::collections::BTreeSet<&str> =
        csv.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(us.len(), 3);
}

#[test]
fn value_rebalances_into_the_wedge() {
    let dir = tempfile::tempdir().unwrap();
    let p = params(dir.path(), "m.json", MARKET);
    let v = json(&run(&["value", "--params", p.to_str().unwrap()]));
    let r = &v["result"];
    assert_eq!(r["region"], "Sell");
    let a = &r["after_trade"];
    let (x, y, th) = (a["x"].as_f64().unwrap(), a["y"].as_f64().unwrap(), a["theta"].as_f64().unwrap());
    assert!((y * th / (x + y * th) - r["p_upper"].as_f64().unwrap()).abs() < 1e-12);
    assert!(r["certainty_equivalent"].as_f64().unwrap() > 0.0);
    assert!(r["controls"]["consumption"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_is_reproducible_and_dumps_paths() {
    let dir = tempfile::tempdir().unwrap();
    let p = params(dir.path(), "m.json", MARKET);
    let out = dir.path().join("sim");
    let args = ["simulate", "--params", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "11"];
    let a = json(&run(&args));
    let b = json(&run(&[&args[..], &["--dump-paths", "2", "--dump-stride", "100"]].concat()));
    assert_eq!(a["result"]["sim"], b["result"]["sim"]);
    assert_eq!(a["config"], b["config"]);
    let csv = std::fs::read_to_string(out.join("paths.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 5);
    let c = json(&run(&[&args[..5], &["--seed", "12"]].concat()));
    assert_ne!(a["result"]["sim"]["estimate"], c["result"]["sim"]["estimate"]);
}

#[test]
fn verify_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = params(dir.path(), "c.json", CASE1);
    let out = dir.path().join("v");
    let o = run(&["verify", "--params", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "--grid", "401"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    let names: Vec<&str> = v["result"].as_array().unwrap().iter().map(|r| r["name"].as_str().unwrap()).collect();
    for prefix in ["identity.", "solution.", "hjb.", "statics."] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "missing {prefix}");
    }
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let code = |body: &str, cmd: &str| {
        let p = params(dir.path(), "e.json", body);
        run(&[cmd, "--params", p.to_str().unwrap()]).status.code().unwrap()
    };
    // b2 <= 1
    assert_eq!(code(r#"{"reduced": {"R": 0.5, "b1": 0.25, "b2": 0.9, "b3": 0.85, "xi": 0.1}}"#, "solve"), 2);
    // unknown key
    assert_eq!(code(r#"{"reduced": {"R": 0.5, "b1": 0.25, "b2": 1.75, "b3": 0.85, "xi": 0.1, "k": 1}}"#, "solve"), 2);
    // Case 2
    assert_eq!(code(r#"{"reduced": {"R": 0.5, "b1": 0.25, "b2": 1.2, "b3": 1.3, "xi": 0.1}}"#, "solve"), 3);
    // Case 3 below the critical cost
    assert_eq!(code(r#"{"reduced": {"R": 0.5, "b1": 0.25, "b2": 1.75, "b3": 1.05, "xi": 0.01}}"#, "solve"), 4);
    // no position for value
    assert_eq!(code(r#"{"reduced": {"R": 0.5, "b1": 0.25, "b2": 1.75, "b3": 0.85, "xi": 0.1}}"#, "value"), 2);
    let p = params(dir.path(), "ok.json", CASE1);
    assert_eq!(run(&["sweep", "--params", p.to_str().unwrap(), "--grid", "xi:lin:1:2:0"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "--params", p.to_str().unwrap(), "--grid", "two"]).status.code(), Some(2));
}
