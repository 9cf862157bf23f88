use std::path::Path;
use std::process::{Command, Output};

use glmcal_core::report::{read_curve_csv, read_reliability_csv};
use serde_json::Value;

fn glmcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glmcal"))
        .args(args)
        .env_remove("GLMCAL_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid json")
}

#[test]
fn solve_reports_small_residual() {
    let v = json(&glmcal(&["solve", "--kappa", "0.1"]));
    assert_eq!(v["schema"], 1);
    assert_eq!(v["command"], "solve");
    assert!(v["residual_norm"].as_f64().unwrap() <= 1e-10);
    let r = v["r_star"].as_f64().unwrap();
    let c = v["c_star"].as_f64().unwrap();
    assert!(r > 1.0 && c > 0.0 && c < 1.0);
}

#[test]
fn exit_codes() {
    assert_eq!(glmcal(&["solve", "--kappa", "0.9"]).status.code(), Some(2));
    assert_eq!(glmcal(&["solve", "--kappa", "-1"]).status.code(), Some(1));
    assert_eq!(glmcal(&["solve"]).status.code(), Some(1));
    assert_eq!(glmcal(&["curve", "--kappa", "0.1", "--p", "1.5"]).status.code(), Some(1));
    assert_eq!(glmcal(&["simulate", "--d", "10"]).status.code(), Some(1));
    assert_eq!(glmcal(&["--help"]).status.code(), Some(0));
    assert_eq!(glmcal(&["sweep", "--help"]).status.code(), Some(0));
}

#[test]
fn check_flags_underconfidence_near_half() {
    let v = json(&glmcal(&["check", "--family", "underconf", "--p", "0.505,0.9"]));
    let verdicts = v["verdicts"].as_array().unwrap();
    assert_eq!(verdicts[0]["verdict"], "UnderConfident");
    assert!(verdicts[0]["cp"].as_f64().unwrap() < 0.0);
    assert_eq!(verdicts[1]["verdict"], "OverConfident");

    let v = json(&glmcal(&["check", "--p", "0.6,0.99"]));
    for row in v["verdicts"].as_array().unwrap() {
        assert_eq!(row["verdict"], "OverConfident");
    }
}

#[test]
fn curve_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let out = glmcal(&[
        "curve", "--kappa", "0.1", "--p", "0.5,0.7", "--p-grid", "0.8:0.9:0.05",
        "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let rows = read_curve_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    for r in &rows {
        if r.p == 0.5 {
            assert_eq!(r.delta, 0.0);
        } else {
            assert!(r.delta > 0.0);
        }
    }
    assert!(rows.iter().any(|r| r.kind == "limiting"));
    assert!(rows.iter().any(|r| r.kind == "first-order"));
}

#[test]
fn out_dir_env_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_glmcal"))
        .args(["ce", "--kappa", "0.05"])
        .env("GLMCAL_OUT_DIR", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(dir.path().join("ce.json")).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    let ce = v["ce"].as_f64().unwrap();
    assert!(ce > 0.0 && ce < 0.05);

    let status = Command::new(env!("CARGO_BIN_EXE_glmcal"))
        .args(["expand", "--p", "0.7", "--out", "nested/expand.json"])
        .env("GLMCAL_OUT_DIR", dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(Path::new(&dir.path().join("nested/expand.json")).exists());
}

fn simulate_to(path: &Path) -> Vec<u8> {
    let out = glmcal(&[
        "simulate", "--d", "40", "--kappa", "0.1", "--step", "1", "--seeds", "3,7",
        "--p", "0.6,0.8", "--test-n", "4000", "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::read(path).unwrap()
}

#[test]
fn simulate_is_deterministic_and_tagged() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate_to(&dir.path().join("a.csv"));
    let b = simulate_to(&dir.path().join("b.csv"));
    assert_eq!(a, b);

    let rows = read_curve_csv(&a[..]).unwrap();
    assert_eq!(rows.len(), 4);
    let seeds: Vec<u64> = rows.iter().map(|r| r.seed.unwrap()).collect();
    assert_eq!(seeds, vec![3, 3, 7, 7]);
    assert!(rows.iter().all(|r| r.n == Some(400) && r.kind == "exact-finite-w"));

    let rel = read_reliability_csv(std::fs::File::open(dir.path().join("a_reliability.csv")).unwrap()).unwrap();
    let total: usize = rel.iter().filter(|r| r.seed == 3).map(|r| r.count).sum();
    assert_eq!(total, 4000);
}

#[test]
fn sweep_means_are_overconfident() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = glmcal(&[
        "sweep", "--d", "40", "--kappa", "0.05,0.2", "--step", "1", "--seeds", "5",
        "--p", "0.75", "--test-n", "1000", "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_curve_csv(std::fs::File::open(&path).unwrap()).unwrap();
    for kappa in [0.05, 0.2] {
        let limit: Vec<_> = rows.iter().filter(|r| r.kind == "limiting" && r.kappa == Some(kappa)).collect();
        assert_eq!(limit.len(), 1);
        let emp: Vec<f64> = rows
            .iter()
            .filter(|r| r.kind == "exact-finite-w" && r.kappa == Some(kappa))
            .map(|r| r.delta)
            .collect();
        assert_eq!(emp.len(), 5);
        let mean = emp.iter().sum::<f64>() / 5.0;
        assert!(mean > 0.0 && limit[0].delta > 0.0);
    }
}

#[test]
fn sweep_failure_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = glmcal(&[
        "sweep", "--d", "20", "--kappa", "0.1,0.9", "--step", "1", "--seeds", "1",
        "--p", "0.75", "--test-n", "500", "--max-iter", "100000", "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let rows = read_curve_csv(std::fs::File::open(&path).unwrap()).unwrap();
    assert!(rows.iter().any(|r| r.kind == "limiting" && r.kappa == Some(0.1)));
    assert!(!rows.iter().any(|r| r.kind == "limiting" && r.kappa == Some(0.9)));
}
