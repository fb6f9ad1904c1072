//! End-to-end runs of the `wavecontrol` binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use wavecontrol::system::StateVector;

const INTERVAL: &str = r#"{
    "domain": {"domain": {"kind": "unit_interval"}, "target_h": 0.125},
    "time": {"T": 2.0, "rho": 1.0},
    "cutoff": {"kind": "boundary_collar", "width": 0.3, "delta": 0.1},
    "data": {"g0": "sin_product", "g1": "zero"},
    "infsup": {"trials": 100},
    "export_matrix": true,
    "seed": 5
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_wavecontrol"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn strip_times(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("wall_time");
            m.values_mut().for_each(strip_times);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_times),
        _ => {}
    }
}

#[test]
fn solve_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", INTERVAL);
    let out = dir.path().join("out");
    assert_eq!(run("solve", &cfg, &out, &[]), 0);
    for f in ["solution.bin", "mesh.txt", "matrix.coo", "matrix.json", "rhs.txt", "solve.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report = read_json(&out.join("solve.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["seed"], 5);
    assert!(report["solve"]["relative_residual"].as_f64().unwrap() <= 1e-10);
    assert!(report["controllability"]["R_residual"].as_f64().unwrap() > 0.0);

    assert_eq!(run("verify", &cfg, &out, &["--seed", "9"]), 0);
    let v = read_json(&out.join("verify.json"));
    assert_eq!(v["seed"], 9);
    assert_eq!(v["pass"], true);
    assert!(v["forward_replay_rel"].as_f64().unwrap() <= 1e-8);
    assert_eq!(v["uncontrolled_energy_monotone"], true);
}

#[test]
fn solve_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", INTERVAL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("solve", &cfg, &a, &[]), 0);
    assert_eq!(run("solve", &cfg, &b, &[]), 0);
    let (mut ja, mut jb) = (read_json(&a.join("solve.json")), read_json(&b.join("solve.json")));
    strip_times(&mut ja);
    strip_times(&mut jb);
    assert_eq!(ja, jb);
    assert_eq!(std::fs::read(a.join("solution.bin")).unwrap(), std::fs::read(b.join("solution.bin")).unwrap());
}

#[test]
fn zero_data_gives_zero_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", &INTERVAL.replace("\"sin_product\"", "\"zero\""));
    let out = dir.path().join("out");
    assert_eq!(run("solve", &cfg, &out, &[]), 0);
    let x = StateVector::read_binary(std::fs::File::open(out.join("solution.bin")).unwrap()).unwrap();
    assert!(x.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let short = write_config(dir.path(), "short.json", &INTERVAL.replace("\"T\": 2.0", "\"T\": 1.0"));
    assert_eq!(run("solve", &short, &out, &[]), 2);
    assert_eq!(run("solve", &short, &out, &["--allow-short-T"]), 0);
    let rho = write_config(dir.path(), "rho.json", &INTERVAL.replace("\"rho\": 1.0", "\"rho\": 8.0"));
    assert_eq!(run("solve", &rho, &out, &[]), 2);
    let broken = write_config(dir.path(), "broken.json", "{ not json");
    assert_eq!(run("infsup", &broken, &out, &[]), 2);
    assert_eq!(run("solve", &dir.path().join("missing.json"), &out, &[]), 2);
    let fresh = dir.path().join("fresh");
    let cfg = write_config(dir.path(), "run.json", INTERVAL);
    assert_eq!(run("verify", &cfg, &fresh, &[]), 2);
}

#[test]
fn infsup_oracle_and_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", &INTERVAL.replace("\"sin_product\"", "\"zero\""));
    let out = dir.path().join("out");
    assert_eq!(run("infsup", &cfg, &out, &[]), 0);
    let r = read_json(&out.join("infsup.json"));
    assert!(r["infsup"]["c_emp"].as_f64().unwrap() > 0.0);
    assert_eq!(r["infsup"]["trials"], 100);

    assert_eq!(run("oracle", &cfg, &out, &[]), 0);
    assert_eq!(read_json(&out.join("oracle.json"))["oracle"]["pass"], true);

    assert_eq!(run("convergence", &cfg, &out, &[]), 0);
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("level,h,tau,N,Nh,dofs,R_residual,zD,ZDprime,self_err_state_H1"));
    assert!(lines[3].contains(",0.000000e0,"));
    assert!(std::fs::read_to_string(out.join("convergence.gp")).unwrap().contains("convergence.csv"));
}
