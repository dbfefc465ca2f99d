//! End-to-end runs of the `stepproof` binary over the committed mini corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/mini")
}

fn stepproof(dir: &Path, args: &[&str]) -> Output {
    let f = fixtures();
    // Shared flags first; later occurrences (in `args`) override them.
    Command::new(env!("CARGO_BIN_EXE_stepproof"))
        .arg("--config")
        .arg(f.join("mini.conf"))
        .arg("--dir")
        .arg(dir)
        .arg("--cache")
        .arg(f.join("cache.jsonl"))
        .arg("--input")
        .arg(f.join("problems_input.jsonl"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = stepproof(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    stepproof(dir, args).status.code().expect("exited normally")
}

const PIPELINE: [&str; 7] = [
    "ingest",
    "rollout",
    "score",
    "refine",
    "build-sft",
    "build-dpo",
    "report",
];

#[test]
fn replay_run_reproduces_goldens() {
    let dir = tempfile::tempdir().unwrap();
    let mut last = String::new();
    for cmd in PIPELINE {
        last = ok(dir.path(), &[cmd]);
    }
    assert!(last.contains("mean LogicScore"), "{last}");
    for name in [
        "rollouts.jsonl",
        "scored.jsonl",
        "refinements.jsonl",
        "refined_scored.jsonl",
        "scored_after.jsonl",
        "sft.jsonl",
        "dpo.jsonl",
        "report.json",
    ] {
        let got = std::fs::read(dir.path().join(name)).unwrap();
        let want = std::fs::read(fixtures().join("golden").join(name)).unwrap();
        assert!(got == want, "{name} differs from golden");
    }
    for cmd in PIPELINE {
        assert!(
            dir.path().join("manifests").join(format!("{cmd}.json")).exists(),
            "{cmd}"
        );
    }
}

#[test]
fn no_ground_truth_scores_equal_reasoning_validity() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["ingest", "rollout"] {
        ok(dir.path(), &[cmd]);
    }
    ok(dir.path(), &["score", "--no-ground-truth"]);
    let text = std::fs::read_to_string(dir.path().join("scored.jsonl")).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["score"], v["rv"], "{line}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Missing inputs: I/O.
    assert_eq!(code(dir.path(), &["score"]), 3);
    assert_eq!(code(dir.path(), &["build-sft"]), 3);
    assert_eq!(code(dir.path(), &["report"]), 3);
    ok(dir.path(), &["ingest"]);
    ok(dir.path(), &["rollout"]);
    // Configuration.
    assert_eq!(code(dir.path(), &["score", "--weights", "0.6,0.5"]), 2);
    assert_eq!(code(dir.path(), &["refine", "--refine-k", "0"]), 2);
    assert_eq!(code(dir.path(), &["score", "--prover", "coq"]), 2);
    assert_eq!(code(dir.path(), &["score", "--no-such-flag", "1"]), 2);
    assert_eq!(code(dir.path(), &["frobnicate"]), 2);
    // Backend unavailable.
    assert_eq!(
        code(
            dir.path(),
            &[
                "score",
                "--prover",
                "isabelle",
                "--isabelle-path",
                "/nonexistent/isabelle"
            ]
        ),
        4
    );
    let empty = dir.path().join("empty-cache.jsonl");
    assert_eq!(code(dir.path(), &["rollout", "--cache", empty.to_str().unwrap()]), 4);
    // Empty report input: I/O.
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let empty_scored = dir.path().join("empty.jsonl");
    assert_eq!(
        code(dir.path(), &["report", "--scored", empty_scored.to_str().unwrap()]),
        3
    );
}

#[test]
fn failed_commands_leave_no_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["ingest"]);
    let empty = dir.path().join("empty-cache.jsonl");
    assert_eq!(code(dir.path(), &["rollout", "--cache", empty.to_str().unwrap()]), 4);
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(
        !names.iter().any(|n| n == "rollouts.jsonl" || n.starts_with(".tmp")),
        "{names:?}"
    );
}
