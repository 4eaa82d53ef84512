//! End-to-end runs of the `geogate` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use geogate::model::{matrix_to_json, PhysicalParams};
use serde_json::Value;

fn geogate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geogate"))
        .args(args)
        .env_remove("GEOGATE_CONFIG")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

/// Cheap settings: a coarse Krotov grid and only the 2 GHz CDD drive.
const SMALL: &str = r#"{
    "cdd_bench": { "frequencies_ghz": [2.0], "include_undriven": true },
    "verify": { "frequencies_ghz": [2.0] },
    "krotov": { "steps": 200, "max_iter": 40 }
}"#;

#[test]
fn bad_configs_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    for json in [r#"{ "physical": { "gate_time_ns": -1.0 } }"#, r#"{ "unknown": 1 }"#, "not json"] {
        let cfg = write_config(dir.path(), json);
        let out = geogate(&["--config", &cfg, "cdd-bench", "--out", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{json}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = geogate(&["optimize", "--method", "annealing", "--gate", "cx"]);
    assert_eq!(out.status.code(), Some(2));
    let out = geogate(&["optimize", "--method", "krotov", "--gate", "cx", "--axes", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cdd_bench_writes_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("bench");
    let out = geogate(&["--config", &cfg, "cdd-bench", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("cdd_bench.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "frequency_ghz,steps,fidelity");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("none,"));
    let f: f64 = lines[2].rsplit(',').next().unwrap().parse().unwrap();
    assert!(f > 0.99 && f <= 1.0, "{f}");
}

#[test]
fn krotov_run_writes_every_artifact_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = geogate(&["--config", &cfg, "optimize", "--method", "krotov", "--gate", "cx", "--out", out_dir.to_str().unwrap()]);
        assert!(matches!(out.status.code(), Some(0 | 3)), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    let files = ["report.json", "controls.csv", "fidelity_curve.csv", "energy_integrand.csv", "fidelity.svg", "energy_integrand.svg"];
    for f in files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }
    let report: Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["method"], "krotov");
    assert_eq!(report["metadata"]["config_hash"].as_str().unwrap().len(), 64);
    assert!(report["report"]["energy"].as_f64().unwrap() > 0.0);
    let controls = fs::read_to_string(a.join("controls.csv")).unwrap();
    assert!(controls.starts_with("t_ns,h1,h2,h3,h4,h5,h6\n"));
    assert_eq!(controls.lines().count(), 202);
}

#[test]
fn exhausted_iterations_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{ "krotov": { "steps": 100, "max_iter": 1 } }"#);
    let out_dir = dir.path().join("run");
    let out = geogate(&["--config", &cfg, "optimize", "--method", "krotov", "--gate", "r", "--axes", "yz", "--no-plots", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("report.json").exists());
    assert!(!out_dir.join("fidelity.svg").exists());
}

#[test]
fn verifying_zero_controls_against_the_drift_gate_reproduces_the_cdd_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let params = PhysicalParams::default();
    let gate = dir.path().join("drift_gate.json");
    fs::write(&gate, matrix_to_json(&params.drift_hamiltonian().propagator(params.tau))).unwrap();
    let controls = dir.path().join("zero.csv");
    let mut text = String::from("t_ns,h1,h2,h3,h4,h5,h6\n");
    for i in 0..=100 {
        text.push_str(&format!("{},0,0,0,0,0,0\n", 0.4 * i as f64));
    }
    fs::write(&controls, text).unwrap();

    let out_dir = dir.path().join("verify");
    let out = geogate(&[
        "--config",
        &cfg,
        "verify",
        "--controls",
        controls.to_str().unwrap(),
        "--gate",
        &format!("custom:{}", gate.display()),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&fs::read(out_dir.join("verify.json")).unwrap()).unwrap();
    assert!((report["drift_model_fidelity"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let row = &report["rows"][0];
    let (full, cdd) = (row["full_stack_fidelity"].as_f64().unwrap(), row["cdd_only_fidelity"].as_f64().unwrap());
    assert!((full - cdd).abs() < 1e-10, "{full} vs {cdd}");
}

#[test]
fn controls_on_the_wrong_gate_time_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let controls = dir.path().join("short.csv");
    fs::write(&controls, "t_ns,h1,h2,h3,h4,h5,h6\n0,0,0,0,0,0,0\n10,0,0,0,0,0,0\n20,0,0,0,0,0,0\n").unwrap();
    let out = geogate(&["verify", "--controls", controls.to_str().unwrap(), "--gate", "cz"]);
    assert_eq!(out.status.code(), Some(2));
}
