// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("opdiff-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn opdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opdiff")).args(args).output().unwrap()
}

fn run_in(dir: &Path, experiment: &str, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", experiment, "--out", out];
    args.extend_from_slice(extra);
    opdiff(&args)
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn nonlocal_csvs_are_reproducible() {
    let (a, b) = (scratch("nl-a"), scratch("nl-b"));
    for d in [&a, &b] {
        let o = run_in(d, "nonlocal", &["--steps", "2", "--dump-graph"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["loss.csv", "kernel.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let loss = std::fs::read_to_string(a.join("loss.csv")).unwrap();
    assert!(loss.starts_with("step,loss,grad_norm,nodes\n"));
    assert_eq!(loss.lines().count(), 4);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["config"]["optimizer"]["steps"], 2);
    assert_eq!(report["config"]["grid"]["kind"], "gauss_legendre");
    assert!(a.join("graph.json").exists());
}

#[test]
fn zero_step_size_freezes_the_loss() {
    let d = scratch("nl-zero");
    let o = run_in(&d, "nonlocal", &["--steps", "2", "--step-size", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let loss = std::fs::read_to_string(d.join("loss.csv")).unwrap();
    let values: Vec<&str> = loss.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values.len(), 3);
    assert!(values.iter().all(|v| *v == values[0]), "{values:?}");
}

#[test]
fn node_budget_aborts_the_run() {
    let d = scratch("nl-budget");
    let cfg = write_config(
        &d,
        r#"{"experiment": "nonlocal", "grid": {"kind": "gauss_legendre", "a": 0, "b": 1, "n": 8},
            "optimizer": {"step_size": 0.1, "steps": 4}, "node_budget": 50}"#,
    );
    let o = run_in(&d, "nonlocal", &["--config", &cfg]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));
}

#[test]
fn curve_through_the_start_is_singular() {
    let d = scratch("brach-singular");
    let cfg = write_config(
        &d,
        r#"{"experiment": "brachistochrone", "grid": {"kind": "supplied", "points": [0, 0.5], "weights": [0.5, 0.5]},
            "optimizer": {"step_size": 0.001, "steps": 1}, "estimator": "minimize_F"}"#,
    );
    let o = run_in(&d, "brachistochrone", &["--config", &cfg]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("singular"), "{}", stderr(&o));
}

#[test]
fn brachistochrone_writes_the_curve() {
    let d = scratch("brach");
    let o = run_in(&d, "brachistochrone", &["--steps", "3", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let curve = std::fs::read_to_string(d.join("curve.csv")).unwrap();
    assert!(curve.starts_with("x,y,cycloid,dfdy\n"));
    assert_eq!(curve.lines().count(), 51);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["optimizer"]["seed"], 7);
    assert_eq!(report["config"]["estimator"], "minimize_FD");
}

#[test]
fn adjoint_check_fails_below_roundoff() {
    let d = scratch("adjoint");
    let ok = write_config(
        &d,
        r#"{"experiment": "adjoint_check", "grid": {"kind": "gauss_legendre", "a": -6, "b": 6, "n": 120},
            "optimizer": {"step_size": 1, "steps": 1}, "tolerance": 1e-5}"#,
    );
    let o = run_in(&d, "adjoint_check", &["--config", &ok]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(d.join("adjoint.csv")).unwrap().starts_with("case,forward,adjoint,rel_err\n"));
    let strict = write_config(
        &d,
        r#"{"experiment": "adjoint_check", "grid": {"kind": "gauss_legendre", "a": -6, "b": 6, "n": 120},
            "optimizer": {"step_size": 1, "steps": 1}, "tolerance": 1e-300}"#,
    );
    let o = run_in(&d, "adjoint_check", &["--config", &strict]);
    assert!(!o.status.success());
}

#[test]
fn cse_bench_header() {
    let d = scratch("cse");
    let o = run_in(&d, "cse-bench", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.join("cse.csv")).unwrap();
    assert!(csv.starts_with("depth,calls_cached,calls_naive,seconds_cached,seconds_naive\n"));
    let naive: Vec<u64> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(naive, (1..=12).map(|d| 1u64 << d).collect::<Vec<_>>());
}

#[test]
fn semilocal_demo_potential() {
    let d = scratch("semilocal");
    let o = run_in(&d, "semilocal_demo", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.join("potential.csv")).unwrap();
    assert!(csv.starts_with("x,rho,v,oracle\n"));
}

#[test]
fn bad_inputs_are_rejected() {
    let d = scratch("bad");
    assert!(!run_in(&d, "nope", &[]).status.success());
    let cfg = write_config(
        &d,
        r#"{"experiment": "nonlocal", "grid": {"kind": "gauss_legendre", "a": 0, "b": 1, "n": 8},
            "optimizer": {"step_size": 0.1, "steps": 4}, "estimator": "minimize_F"}"#,
    );
    let o = run_in(&d, "nonlocal", &["--config", &cfg]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("estimator"), "{}", stderr(&o));
    assert!(!run_in(&d, "nonlocal", &["--optimizer", "lbfgs"]).status.success());
}
