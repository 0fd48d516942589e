use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kinlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinlab")).args(args).env_remove("KINLAB_THREADS").output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn report(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

const DIAG_09: &str = r#"{"model": {"family": "diag", "params": {"n": 2, "a": 0.9}, "c": {"law": "constant", "value": 1.0}}}"#;

#[test]
fn classify_labels_supercritical_diag_as_a() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", DIAG_09);
    let out = dir.path().join("out");
    let o = kinlab(&["classify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out.join("classify.json"));
    assert_eq!(r["report"]["label"], "A");
    assert_eq!(r["command"], "classify");
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    assert!(r["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    let meta = report(&out.join("classify.meta.json"));
    assert!(meta["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"model": {"family": "diag", "params": {"n": 2, "a": 0.9}, "c": {"law": "constant", "value": 1.0}},
                   "seed": 42, "simulate": {"n": 500, "checkpoints": [0.5, 1.0], "gammas": [0.5, 1.0], "binary": true}}"#;
    let cfg = write_config(dir.path(), "c.json", body);
    let mut runs = Vec::new();
    for (k, threads) in ["1", "2", "1"].iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        let o = kinlab(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push(out);
    }
    for file in ["simulate.json", "simulate_summary.csv", "simulate_dump.bin"] {
        let first = std::fs::read(runs[0].join(file)).unwrap();
        assert!(!first.is_empty());
        for r in &runs[1..] {
            assert_eq!(first, std::fs::read(r.join(file)).unwrap(), "{file} differs");
        }
    }
    let other = dir.path().join("reseeded");
    assert!(kinlab(&["simulate", "--config", &cfg, "--out", other.to_str().unwrap(), "--seed", "43"]).status.success());
    assert_ne!(std::fs::read(runs[0].join("simulate_summary.csv")).unwrap(), std::fs::read(other.join("simulate_summary.csv")).unwrap());
}

#[test]
fn crosscheck_on_critical_diag_is_within_band() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"model": {"family": "diag", "params": {"n": 2, "a": 0.5}, "c": {"law": "constant", "value": 1.0}},
                   "seed": 7, "crosscheck": {"t": 1.0}}"#;
    let cfg = write_config(dir.path(), "c.json", body);
    let out = dir.path().join("out");
    let o = kinlab(&["crosscheck", "--config", &cfg, "--out", out.to_str().unwrap(), "--strict"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out.join("crosscheck.json"));
    assert_eq!(r["passed"], true);
    assert!(r["report"]["result"]["sup_distance"].as_f64().unwrap() <= 0.02);
    assert!(out.join("crosscheck_grid.csv").exists());
}

#[test]
fn strict_turns_a_failed_check_into_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{"model": {"family": "diag", "params": {"n": 2, "a": 0.5}, "c": {"law": "constant", "value": 1.0}},
                   "crosscheck": {"n": 2000, "panel": 1000, "n_points": 101, "band": 1e-9}}"#;
    let cfg = write_config(dir.path(), "c.json", body);
    let out = dir.path().join("out");
    let lenient = kinlab(&["crosscheck", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(lenient.status.success());
    let strict = kinlab(&["crosscheck", "--config", &cfg, "--out", out.to_str().unwrap(), "--strict"]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn csv_format_writes_a_key_value_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", DIAG_09);
    let out = dir.path().join("out");
    assert!(kinlab(&["classify", "--config", &cfg, "--out", out.to_str().unwrap(), "--format", "csv"]).status.success());
    let text = std::fs::read_to_string(out.join("classify.csv")).unwrap();
    assert!(text.starts_with("key,value\n"));
    assert!(text.contains("report.label,A\n"));
}

#[test]
fn invalid_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let unknown = write_config(dir.path(), "u.json", &DIAG_09.replacen('{', r#"{"sede": 1, "#, 1));
    let o = kinlab(&["classify", "--config", &unknown, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sede"));
    let bad_model = write_config(dir.path(), "b.json", &DIAG_09.replace("0.9", "-0.9"));
    assert_eq!(kinlab(&["classify", "--config", &bad_model, "--out", out.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(kinlab(&["classify", "--config", "/nonexistent.json"]).status.code(), Some(2));
    assert!(!out.exists());
}
