use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mest")).args(args).output().expect("spawn mest")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn missing_config_exits_2() {
    let out = mest(&["train", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"model": "tiny-cnn", "sparsity": "lots"}"#).unwrap();
    let out = mest(&["flops", "--config", arg(&p)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn forgetting_report_on_empty_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mest(&["forgetting-report", "--run", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn footprint_compares_all_modes() {
    let out = mest(&["footprint", "--config", arg(&config("mnist-tiny-em.json")), "--mode", "compare-all"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    for mode in ["dense", "structured", "unstructured", "block", "pattern"] {
        assert!(text.contains(mode), "{mode} missing from\n{text}");
    }
}

#[test]
fn train_then_report_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = mest(&["train", "--config", arg(&config("synth-em.json")), "--out", arg(&run), "-q"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "metrics.csv", "timing.csv", "mutations.csv", "forgetting.csv", "summary.json", "final.ckpt"] {
        assert!(run.join(f).is_file(), "{f} not written");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 9);
    assert_eq!(metrics.lines().next().unwrap(), mest_lab::run::METRICS_HEADER);

    let out = mest(&["forgetting-report", "--run", arg(&run), "--th", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("forgetting-th1.csv").is_file());
    assert!(run.join("thresholds.csv").is_file());

    let out = mest(&["inspect-checkpoint", arg(&run.join("final.ckpt"))]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("epoch"));

    // a sweep directory holding the run gives a grid
    let out = mest(&["forgetting-report", "--run", arg(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("grid.csv").is_file());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ckpt");
    std::fs::write(&p, b"not a checkpoint").unwrap();
    let out = mest(&["inspect-checkpoint", arg(&p)]);
    assert_eq!(out.status.code(), Some(1));
}
