//! Command-level behavior: error classes, exit codes and manifests.

use std::path::{Path, PathBuf};

use stepproof::pipeline::{files, read_jsonl, RunManifest};
use stepproof::refine::select_for_refinement;
use stepproof::scoring::{LogicSource, StepRow};
use stepproof::{Command, Pipeline, PipelineError, ScoredRow, Settings};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini")
}

fn settings(dir: &Path) -> Settings {
    let mut s = Settings::default();
    s.apply_file(&fixtures().join("mini.conf")).unwrap();
    s.set("dir", &dir.display().to_string()).unwrap();
    s.set("input", &fixtures().join("problems_input.jsonl").display().to_string())
        .unwrap();
    s.set("cache", &fixtures().join("cache.jsonl").display().to_string())
        .unwrap();
    s
}

fn run(s: Settings, commands: &[Command]) -> Result<(), PipelineError> {
    let p = Pipeline::new(s)?;
    for &c in commands {
        p.run(c)?;
    }
    Ok(())
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = run(settings(dir.path()), &[Command::Score]).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    let mut s = settings(dir.path());
    s.set("input", "").unwrap();
    assert_eq!(run(s, &[Command::Ingest]).unwrap_err().exit_code(), 2);
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let mut s = settings(dir.path());
    s.set("input", &dir.path().join("empty.jsonl").display().to_string())
        .unwrap();
    assert_eq!(run(s, &[Command::Ingest]).unwrap_err().exit_code(), 3);
    assert_eq!(
        run(settings(dir.path()), &[Command::Report]).unwrap_err().exit_code(),
        3
    );
}

#[test]
fn malformed_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.jsonl"), "{\"id\": 3}\n").unwrap();
    let mut s = settings(dir.path());
    s.set("input", &dir.path().join("bad.jsonl").display().to_string())
        .unwrap();
    assert_eq!(run(s, &[Command::Ingest]).unwrap_err().exit_code(), 1);
}

#[test]
fn replay_miss_is_backend_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = settings(dir.path());
    s.set("cache", &dir.path().join("empty-cache.jsonl").display().to_string())
        .unwrap();
    let err = run(s, &[Command::Ingest, Command::Rollout]).unwrap_err();
    assert!(matches!(err, PipelineError::Backend(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn live_mode_without_credentials_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = settings(dir.path());
    s.set("mode", "live").unwrap();
    s.set("api_key_env", "STEPPROOF_TEST_UNSET_KEY").unwrap();
    let err = run(s, &[Command::Ingest, Command::Rollout]).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn missing_isabelle_is_backend_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    run(settings(dir.path()), &[Command::Ingest, Command::Rollout]).unwrap();
    let mut s = settings(dir.path());
    s.set("prover", "isabelle").unwrap();
    s.set("isabelle_path", "/nonexistent/isabelle").unwrap();
    assert_eq!(run(s, &[Command::Score]).unwrap_err().exit_code(), 4);
}

#[test]
fn refine_rejects_scores_from_another_config() {
    let dir = tempfile::tempdir().unwrap();
    run(
        settings(dir.path()),
        &[Command::Ingest, Command::Rollout, Command::Score],
    )
    .unwrap();
    let mut s = settings(dir.path());
    s.set("weights", "0.7,0.3").unwrap();
    assert_eq!(run(s, &[Command::Refine]).unwrap_err().exit_code(), 2);
}

#[test]
fn zero_refine_k_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = settings(dir.path());
    s.set("refine_k", "0").unwrap();
    assert_eq!(run(s, &[Command::Refine]).unwrap_err().exit_code(), 2);
}

#[test]
fn nothing_to_refine_yields_empty_outputs() {
    let dir = tempfile::tempdir().unwrap();
    run(
        settings(dir.path()),
        &[Command::Ingest, Command::Rollout, Command::Score],
    )
    .unwrap();
    let scored = dir.path().join(files::SCORED);
    let rows: Vec<ScoredRow> = read_jsonl(&scored).unwrap();
    let passing: Vec<ScoredRow> = rows
        .into_iter()
        .filter(|r| r.steps.iter().all(|s| !s.failed()))
        .collect();
    assert!(!passing.is_empty());
    stepproof::pipeline::write_jsonl(&scored, &passing).unwrap();
    run(settings(dir.path()), &[Command::Refine]).unwrap();
    assert!(std::fs::read(dir.path().join(files::REFINEMENTS)).unwrap().is_empty());
    let after: Vec<ScoredRow> = read_jsonl(&dir.path().join(files::SCORED_AFTER)).unwrap();
    assert_eq!(after, passing);
}

#[test]
fn manifests_record_inputs_outputs_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    run(
        settings(dir.path()),
        &[Command::Ingest, Command::Rollout, Command::Score],
    )
    .unwrap();
    let text = std::fs::read_to_string(dir.path().join(files::MANIFESTS).join("score.json")).unwrap();
    let m: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(m.command, "score");
    assert!(m.inputs.contains_key(files::PROBLEMS) && m.inputs.contains_key(files::ROLLOUTS));
    assert!(m.outputs.contains_key(files::SCORED));
    assert_eq!(m.counts["scored"] + m.counts["rejected"], m.counts["traces"]);
    assert_eq!(m.counts["traces"], 192);
    assert_eq!(m.rejections.len(), 24);
    let rows: Vec<ScoredRow> = read_jsonl(&dir.path().join(files::SCORED)).unwrap();
    assert!(rows.iter().all(|r| r.run == m.run_id && r.cfg == m.config_digest));
    assert_eq!(m.counts["scored"], rows.len() as u64);
    let steps: Vec<&StepRow> = rows.iter().flat_map(|r| &r.steps).collect();
    assert_eq!(m.counts["steps"], steps.len() as u64);
    assert_eq!(
        m.counts["verdict_valid"] + m.counts["verdict_invalid"] + m.counts["verdict_fallback"],
        m.counts["steps"]
    );
    let fallback = steps.iter().filter(|s| s.src == LogicSource::Fallback).count();
    assert_eq!(m.counts["verdict_fallback"], fallback as u64);
    let weights = stepproof::Weights::default();
    assert!(rows.iter().all(|r| r.is_consistent(&weights)));
}

#[test]
fn report_compares_explicit_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = settings(dir.path());
    s.set("scored", &fixtures().join("golden/scored.jsonl").display().to_string())
        .unwrap();
    s.set(
        "after",
        &fixtures().join("golden/scored_after.jsonl").display().to_string(),
    )
    .unwrap();
    let out = Pipeline::new(s).unwrap().run(Command::Report).unwrap();
    assert!(
        out.summary.contains("mean LogicScore 0.8530 -> 0.8701"),
        "{}",
        out.summary
    );
}

fn row(rid: &str, failing: bool) -> ScoredRow {
    ScoredRow {
        problem_id: "p1".into(),
        response_id: rid.into(),
        steps: vec![StepRow {
            i: 1,
            pv: 1.0,
            lv: if failing { 0.0 } else { 1.0 },
            src: LogicSource::Prover,
        }],
        rv: 0.5,
        ov: Some(1),
        score: 0.75,
        cfg: "c".into(),
        run: "r".into(),
        refined: false,
    }
}

/// Frozen: the selection stream must not change between releases.
#[test]
fn refinement_selection_is_frozen() {
    let rows: Vec<ScoredRow> = (0..8).map(|i| row(&format!("r{i}"), i < 5)).collect();
    assert_eq!(select_for_refinement(&rows, 2, 7), FROZEN_SEED_7);
}

const FROZEN_SEED_7: [&str; 2] = ["r0", "r2"];
