//! End-to-end checks of the `vita-sim` binary: exit codes, JSON envelope, files.

use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn vita(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vita-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(args: &[&str]) -> Value {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let o = vita(&full);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("valid JSON")
}

#[test]
fn models_lists_builtins() {
    let o = vita(&["models"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["vit_b16", "deit_b", "deit_s", "deit_t", "swin_t"] {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn json_envelope_has_the_four_keys() {
    let v = json(&["perf", "--model", "deit_t"]);
    assert_eq!(v["command"], "perf");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["inputs"]["model"], "deit_t");
    assert!(v["results"]["fps"].as_f64().unwrap() > 0.0);
}

#[test]
fn workload_footprint_matches_reference() {
    let v = json(&[
        "workload",
        "--model",
        "vit_b16",
        "--image",
        "256x256",
        "--compare",
        "paper",
    ]);
    assert_eq!(v["results"]["tokens"], 256);
    for row in v["results"]["compare_footprint"].as_array().unwrap() {
        assert_eq!(row["delta"], 0, "{row}");
    }
}

#[test]
fn dse_top_one_is_the_reference_config() {
    let v = json(&[
        "dse", "--model", "vit_b16", "--image", "256x256", "--top", "1",
    ]);
    let ranked = v["results"]["ranked"].as_array().unwrap();
    assert_eq!(ranked.len(), 1);
    assert_eq!(ranked[0]["config"], serde_json::json!([16, 6, 8, 4]));
}

#[test]
fn dse_csv_has_header_and_rows() {
    let o = vita(&[
        "dse", "--model", "deit_t", "--top", "3", "--csv", "--max-k", "16",
    ]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 4, "{text}");
}

#[test]
fn verify_passes_and_detects_faults() {
    assert_eq!(code(&vita(&["verify", "--seed", "7"])), 0);
    let o = vita(&["verify", "--seed", "7", "--inject-fault"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn verify_rejects_windowed_models() {
    assert_eq!(code(&vita(&["verify", "--model", "swin_t"])), 2);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&vita(&["perf", "--model", "nope"])), 2);
    assert_eq!(code(&vita(&["perf", "--image", "abc"])), 2);
    assert_eq!(code(&vita(&["perf", "--config", "1,2,3"])), 2);
    assert_eq!(code(&vita(&["frobnicate"])), 2);
}

#[test]
fn resource_errors_exit_one() {
    let o = vita(&["perf", "--model", "deit_t", "--config", "64,16,64,16"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lut"));
    let o = vita(&["perf", "--model", "swin_t"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("qkv"));
    assert_eq!(
        code(&vita(&["perf", "--model", "swin_t", "--allow-overbudget"])),
        0
    );
}

#[test]
fn tiny_budget_has_no_feasible_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("budget.toml");
    fs::write(&path, "lut_budget = 100\n").unwrap();
    let o = vita(&[
        "dse",
        "--model",
        "deit_t",
        "--budget-file",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn model_and_spec_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.toml");
    let spec = dir.path().join("spec.toml");
    fs::write(
        &model,
        "name = \"tiny\"\npatch_size = 16\n\n[[stages]]\ndepth = 2\nlatent_dim = 128\nheads = 2\nmlp_hidden = 256\n",
    )
    .unwrap();
    fs::write(&spec, "k1 = 8\nk2 = 4\nk3 = 4\nk4 = 2\n").unwrap();
    let v = json(&[
        "perf",
        "--model-file",
        model.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
    ]);
    assert_eq!(v["results"]["mac_units"], 3 * 8 * 4 + 2 * 4 * 2);
    fs::write(&spec, "k1 = 8\nbogus = 1\n").unwrap();
    let o = vita(&["perf", "--spec", spec.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn trace_writes_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let o = vita(&[
        "trace",
        "--model",
        "deit_t",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("engine,layer,head,index,start,end,bytes"));
    assert!(text.lines().count() > 1000);
}

#[test]
fn perf_validate_agrees_with_trace() {
    let o = vita(&["perf", "--model", "deit_s", "--validate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
