use std::fs;
use std::path::{Path, PathBuf};

use noteflow_core::pipeline::{self, PipelineConfig, PipelineError, DETERMINISTIC_ARTIFACTS};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/session.jsonl")
}

fn config(out: &Path) -> PipelineConfig {
    PipelineConfig { input: fixture(), output: out.to_path_buf(), audit_sample: 3, seed: 7, ..Default::default() }
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = pipeline::run_pipeline(&config(dir.path())).unwrap();
    for name in DETERMINISTIC_ARTIFACTS {
        assert!(dir.path().join(name).is_file(), "{name}");
        assert!(manifest.artifacts.contains_key(name), "{name}");
    }
    assert!(dir.path().join(pipeline::AUDIT_SAMPLE).is_file());
    assert!(!dir.path().join(".staging").exists());

    let n = &manifest.normalize;
    assert_eq!(n.input_events, 56);
    assert_eq!(n.duplicates, 1);
    assert_eq!(n.input_events, n.records - n.synthesized + n.rejects);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], manifest.config_hash);
    assert_eq!(report["counts"]["notebooks"], 2);
    assert_eq!(report["counts"]["executions"], 19);
    let t = &report["transitions"];
    assert_eq!(t["total"], 17);
    let shares = t["self_share"].as_f64().unwrap() + t["inter_share"].as_f64().unwrap();
    assert!((shares - 1.0).abs() < 1e-12);
    let time_rows = report["time"]["rows"].as_array().unwrap();
    assert!(time_rows.iter().any(|r| r["task"] == "ML" && r["expertise"] == "All"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = pipeline::run_pipeline(&config(a.path())).unwrap();
    let mb = pipeline::run_pipeline(&config(b.path())).unwrap();
    assert_eq!(ma.config_hash, mb.config_hash);
    for name in DETERMINISTIC_ARTIFACTS {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn deleted_intermediates_regenerate_identically() {
    let dir = tempfile::tempdir().unwrap();
    pipeline::run_pipeline(&config(dir.path())).unwrap();
    let before = fs::read(dir.path().join("transitions.jsonl")).unwrap();
    fs::remove_file(dir.path().join("transitions.jsonl")).unwrap();
    pipeline::stage_transitions(&dir.path().join("log.jsonl"), dir.path()).unwrap();
    assert_eq!(fs::read(dir.path().join("transitions.jsonl")).unwrap(), before);
}

#[test]
fn backend_without_token_fails_before_work() {
    if std::env::var_os(noteflow_core::annotate::backend::TOKEN_ENV).is_some() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(&dir.path().join("out"));
    c.backend.enabled = true;
    let err = pipeline::run_pipeline(&c).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_input_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.jsonl");
    fs::write(&input, "{\"kind\":\"run_cell\"}\n").unwrap();
    let c = PipelineConfig { input, output: dir.path().join("out"), ..Default::default() };
    let err = pipeline::run_pipeline(&c).unwrap_err();
    assert!(matches!(err, PipelineError::Validation(_)));
    assert!(err.to_string().contains(":1:"));
}

#[test]
fn failing_stage_is_quarantined() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    // execute of a cell that was never created cannot be replayed
    fs::write(
        &log,
        r#"{"kind":"execute_cell","session_id":"s","kernel_id":"k","notebook_name":"n","timestamp":1,"seq":1,"user_id":"u","cell_id":"x","cell_ordinal":0,"source":"1","seq_no":0,"repaired":[]}"#.to_string() + "\n",
    )
    .unwrap();
    let err = pipeline::stage_snapshots(&log, dir.path(), false).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(dir.path().join("quarantine/snapshots").is_dir());
    assert!(!dir.path().join("snapshots.jsonl").exists());
}

#[test]
fn config_hash_ignores_output_location() {
    let a = config(Path::new("/tmp/a"));
    let b = config(Path::new("/tmp/b"));
    assert_eq!(a.hash(), b.hash());
    let mut c = a.clone();
    c.include_zero_distance = false;
    assert_ne!(a.hash(), c.hash());
}
