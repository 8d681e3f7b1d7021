use std::path::Path;
use std::process::{Command, Output};

fn xmod(args: &[&str], data_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmod"))
        .args(args)
        .env("XMOD_DATA_DIR", data_dir)
        .output()
        .expect("spawn xmod")
}

#[test]
fn missing_checkpoint_is_actionable() {
    let dir = tempfile::tempdir().unwrap();
    let out = xmod(&["simulate", "--sessions", "1"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("xmod train ssl"), "{err}");
}

#[test]
fn export_then_analyze_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = xmod(&["export-stimuli", "--count", "2", "--seed", "3"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["plan.csv", "practice.csv", "manifest.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "participant_id,agent,trial_id,block,congruence,target,response,correct,rt_ms\n").unwrap();
    let out = xmod(&["analyze", empty.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn config_file_overrides_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "simulate.sessions = 0\n").unwrap();
    let out = xmod(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("simulate.sessions"));
}
