use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nullrec-sim"));
    c.env_remove("NULLREC_SEED");
    c
}

fn run_config(dir: &Path, name: &str, body: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{name}.json"));
    fs::write(&cfg, body).unwrap();
    let out = dir.join(name);
    bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap()
}

const DEMO: &str = r#"{"kind": "oscillator-demo", "grid": {"t_end": 6.283185307179586, "max_step": 0.01},
    "master_seed": 7, "options": {"sqrt_eps": 0.1, "sigma_l2": 100.0, "h_inner": 1e-4}}"#;

const RATE: &str = r#"{"kind": "verify-rate", "grid": {"t_end": 1.0, "n_steps": 10},
    "eps": [0.4, 0.2], "n_paths": 40, "master_seed": 3, "options": {"p": 2}}"#;

#[test]
fn catalog_lists_entries_stably() {
    let a = bin().arg("list-catalog").output().unwrap();
    let b = bin().arg("list-catalog").output().unwrap();
    assert!(a.status.success());
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    assert!(text.contains("oscillator"));
    assert!(text.contains("gaussian_bump"));
    assert!(text.contains("|sigma_hat^2|_1="));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn demo_artifact_is_deterministic_and_carries_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_config(dir.path(), "a", DEMO, &[]);
    let b = run_config(dir.path(), "b", DEMO, &[]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(b.status.success());
    let fa = fs::read(dir.path().join("a/oscillator_demo.csv")).unwrap();
    let fb = fs::read(dir.path().join("b/oscillator_demo.csv")).unwrap();
    assert_eq!(fa, fb);
    let text = String::from_utf8(fa).unwrap();
    assert!(text.starts_with("# config_sha256="));
    assert!(text.contains("# master_seed=7\r\n"));
    assert!(text.contains("t,cos,q,V,L\r\n"));
}

#[test]
fn rate_report_has_a_slope_and_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let one = run_config(dir.path(), "one", RATE, &["--threads", "1"]);
    let many = run_config(dir.path(), "many", RATE, &[]);
    for o in [&one, &many] {
        assert!(
            matches!(o.status.code(), Some(0) | Some(1)),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let ja = fs::read_to_string(dir.path().join("one/lemma_rate.json")).unwrap();
    let jb = fs::read_to_string(dir.path().join("many/lemma_rate.json")).unwrap();
    assert_eq!(ja, jb);
    let v: Value = serde_json::from_str(&ja).unwrap();
    assert!(v["slope"].is_number());
    assert_eq!(v["params"]["master_seed"], 3);
}

#[test]
fn seed_override_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, RATE).unwrap();
    let o = bin()
        .env("NULLREC_SEED", "99")
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(matches!(o.status.code(), Some(0) | Some(1)));
    let v: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/lemma_rate.json")).unwrap())
            .unwrap();
    assert_eq!(v["params"]["master_seed"], 99);
}

#[test]
fn missing_grid_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(
        dir.path(),
        "bad",
        r#"{"kind": "verify-rate", "n_paths": 3}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["kind"], "schema");
    assert!(v["message"].as_str().unwrap().contains("grid"));
    assert_eq!(v["line"], 1);
}

#[test]
fn unknown_field_and_unknown_entry_are_schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(
        dir.path(),
        "typo",
        r#"{"kind": "simulate", "grid": {"t_end": 1, "n_steps": 4}, "seeds": 1}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = run_config(
        dir.path(),
        "entry",
        r#"{"kind": "simulate", "entry": "nope", "grid": {"t_end": 1, "n_steps": 4}}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn blow_up_exits_with_three() {
    // RK4 on the rotation field is unstable for steps this large.
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(
        dir.path(),
        "boom",
        r#"{"kind": "limit", "grid": {"t_end": 1e6, "n_steps": 100}, "n_paths": 1}"#,
        &[],
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["kind"], "runtime");
}

#[test]
fn failed_check_exits_with_one_and_lists_it() {
    // A 1e-6 tolerance cannot be met by 50 local-time samples.
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(
        dir.path(),
        "lt",
        r#"{"kind": "verify-local-time", "grid": {"t_end": 1, "n_steps": 1000}, "n_paths": 50, "options": {"tol": 1e-6}}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["status"], "fail");
    assert!(!v["failed"].as_array().unwrap().is_empty());
}

#[test]
fn simulate_and_localtime_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_config(
        dir.path(),
        "sim",
        r#"{"kind": "simulate", "grid": {"t_end": 1, "n_steps": 100}, "eps": [0.5], "n_paths": 2}"#,
        &[],
    );
    assert!(o.status.success());
    assert!(dir.path().join("sim/simulate_eps0.5_path1.csv").exists());
    let o = run_config(
        dir.path(),
        "lt",
        r#"{"kind": "localtime", "grid": {"t_end": 1, "n_steps": 100}, "n_paths": 1}"#,
        &[],
    );
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("lt/localtime_path0.csv")).unwrap();
    assert!(text.contains("t,W,L_occupation,L_tanaka"));
}
