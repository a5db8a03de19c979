use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn safe_smc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safe-smc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn metrics(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn robust_example2_run_is_safe() {
    let dir = tempfile::tempdir().unwrap();
    let o = safe_smc(&["run", "--preset", "example2", "--mode", "robust", "--x0", "2,1", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = metrics(dir.path());
    assert_eq!(m["report"]["safe"], Value::Bool(true));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,x1,x2,u1,unom1,sigma1,phi1,W0,k,event");
    assert!(dir.path().join("gridscan.csv").exists());
}

#[test]
fn ablation_example3_is_unsafe_and_assertion_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let o = safe_smc(&["run", "--preset", "example3", "--mode", "ablation-no-transient", "--t-end", "2", "--grid", "0", "--out", &out]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(metrics(dir.path())["report"]["safe"], Value::Bool(false));
    let o = safe_smc(&[
        "run", "--preset", "example3", "--mode", "ablation-no-transient", "--t-end", "2", "--grid", "0", "--assert-safe", "--out", &out,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(dir.path().join("metrics.json").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    assert_eq!(safe_smc(&["run", "--preset", "example9", "--out", &out]).status.code(), Some(2));
    assert_eq!(safe_smc(&["run", "--x0", "1,2,3", "--out", &out]).status.code(), Some(2));
    assert_eq!(safe_smc(&["run", "--mode", "fast", "--out", &out]).status.code(), Some(2));
    assert_eq!(safe_smc(&["run", "--plan", "scalar-trig:1,0", "--tf", "2", "--out", &out]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"preset\": \"example2\", \"bogus\": 1}").unwrap();
    assert_eq!(safe_smc(&["run", "--config", bad.to_str().unwrap(), "--out", &out]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("unstable.json");
    std::fs::write(
        &cfg,
        r#"{
  "custom": {
    "a": [[1000.0]], "b": [[0.0]], "p": [[1.0]],
    "unsafe_box": {"lo": [100.0], "hi": [101.0]},
    "lambda": 1.0, "kappa": 0.0, "q": 1.0, "rho": 0.0
  },
  "x0": [1.0],
  "plan": {"family": "zero"},
  "sim": {"mode": "nominal-only", "dt": 0.01, "t_end": 100.0}
}"#,
    )
    .unwrap();
    let o = safe_smc(&["run", "--config", cfg.to_str().unwrap(), "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"preset": "example2", "variant": "third", "sim": {"t_end": 1.0}}"#).unwrap();
    let out = dir.path().join("o");
    let o = safe_smc(&["run", "--config", cfg.to_str().unwrap(), "--dt", "2e-4", "--grid", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = metrics(&out);
    assert_eq!(m["config"]["x0"], serde_json::json!([2.5, 1.25]));
    assert_eq!(m["config"]["sim"]["dt"], serde_json::json!(2e-4));
    assert_eq!(m["config"]["sim"]["t_end"], serde_json::json!(1.0));
}

#[test]
fn compare_nominal_and_robust() {
    let dir = tempfile::tempdir().unwrap();
    let o = safe_smc(&[
        "compare", "--preset", "example2", "--modes", "robust,nominal-only", "--grid", "0", "--out", &out_arg(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table: Value = serde_json::from_slice(&o.stdout).unwrap();
    let runs = table["runs"].as_array().unwrap();
    let post = |i: usize| runs[i]["report"]["post_tf_sigma_sup"].as_f64().unwrap();
    assert_eq!(runs[0]["report"]["safe"], Value::Bool(true));
    assert!(post(1) >= 5.0 * post(0), "{} vs {}", post(1), post(0));
    assert!(dir.path().join("0-robust").join("trajectory.csv").exists());
    assert!(dir.path().join("1-nominal-only").join("metrics.json").exists());
}

#[test]
fn compare_rejects_mixed_presets() {
    let dir = tempfile::tempdir().unwrap();
    let other = dir.path().join("ex3.json");
    std::fs::write(&other, r#"{"preset": "example3"}"#).unwrap();
    let o = safe_smc(&["compare", "--preset", "example2", "--modes", "robust", "--with", other.to_str().unwrap(), "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}
