mod common;

use std::path::Path;
use std::process::{Command, Output};

fn isac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isac-recon")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_succeeds_and_usage_errors_fail_validation() {
    assert_eq!(isac(&["--help"]).status.code(), Some(0));
    assert_eq!(isac(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(isac(&["gen"]).status.code(), Some(1));
}

#[test]
fn bad_configuration_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"model": {"heads": 3}}"#).unwrap();
    let out = isac(&["gen", "--config", p(&cfg), "--out", p(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(isac(&["gen", "--config", p(&cfg), "--out", p(&dir.path().join("d"))]).status.code(), Some(1));
}

#[test]
fn metrics_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.xyz");
    std::fs::write(&a, "0 0 0\n1 0 0\n0 1 0\n").unwrap();
    let out = dir.path().join("m");
    let res = isac(&["metrics", "--pred", p(&a), "--gt", p(&a), "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["chamfer"], 0.0);
    assert_eq!(report["fscore"], 1.0);
}

#[test]
fn stages_require_their_predecessors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.json");
    std::fs::write(&cfg_path, serde_json::to_string(&common::tiny::tiny_config()).unwrap()).unwrap();
    let data = dir.path().join("data");
    let gen = isac(&["gen", "--config", p(&cfg_path), "--out", p(&data)]);
    assert_eq!(gen.status.code(), Some(0), "{}", String::from_utf8_lossy(&gen.stderr));
    let models = dir.path().join("models");
    let res = isac(&["train", "--config", p(&cfg_path), "--data", p(&data), "--out", p(&models), "--stage", "2"]);
    assert_eq!(res.status.code(), Some(1));
    let res = isac(&["train", "--config", p(&cfg_path), "--data", p(&data), "--out", p(&models), "--stage", "9"]);
    assert_eq!(res.status.code(), Some(1));
    // A different seed changes the config hash, so the dataset is refused.
    let res = isac(&["train", "--config", p(&cfg_path), "--seed", "99", "--data", p(&data), "--out", p(&models)]);
    assert_eq!(res.status.code(), Some(1));
}
