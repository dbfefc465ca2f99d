//! Command orchestration: ingest → rollout → score → refine → build → report,
//! with atomic JSONL outputs and per-command run manifests.

mod commands;
pub mod config;
mod report;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::prover::ProverError;
use crate::scoring::ScoringError;

pub use commands::{Command, Outcome, Pipeline};
pub use config::{Settings, KEYS};
pub use report::{distribution, render_report, DistributionReport, ReportSummary, BINS};

/// Data file names inside the working directory.
pub mod files {
    pub const PROBLEMS: &str = "problems.jsonl";
    pub const ROLLOUTS: &str = "rollouts.jsonl";
    pub const SCORED: &str = "scored.jsonl";
    pub const REFINED_ROLLOUTS: &str = "refined_rollouts.jsonl";
    pub const REFINED_SCORED: &str = "refined_scored.jsonl";
    pub const REFINEMENTS: &str = "refinements.jsonl";
    pub const SCORED_AFTER: &str = "scored_after.jsonl";
    pub const SFT: &str = "sft.jsonl";
    pub const DPO: &str = "dpo.jsonl";
    pub const REPORT: &str = "report.json";
    pub const MANIFESTS: &str = "manifests";
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("backend unavailable: {0}")]
    Backend(String),
    #[error("data error: {0}")]
    Data(String),
}

impl PipelineError {
    /// 2 configuration, 3 I/O, 4 backend, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::Backend(_) => 4,
            Self::Data(_) => 1,
        }
    }
}

impl From<GatewayError> for PipelineError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(_) | GatewayError::AuthMissing { .. } => Self::Config(e.to_string()),
            GatewayError::Cache(_) => Self::Io(e.to_string()),
            GatewayError::Transport { .. } | GatewayError::CacheMiss { .. } | GatewayError::BadResponse(_) => {
                Self::Backend(e.to_string())
            }
        }
    }
}

impl From<ProverError> for PipelineError {
    fn from(e: ProverError) -> Self {
        Self::Backend(e.to_string())
    }
}

impl From<ScoringError> for PipelineError {
    fn from(e: ScoringError) -> Self {
        match e {
            ScoringError::Gateway(g) => g.into(),
            ScoringError::InvalidWeights(_) => Self::Config(e.to_string()),
            ScoringError::Embedding(crate::premise::EmbeddingError::Provider(_)) => Self::Backend(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    // Temporary files are created owner-only; outputs are ordinary files.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<String, PipelineError> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|e| PipelineError::Data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let body = to_jsonl(rows)?;
    write_atomic(path, body.as_bytes()).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Data(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

pub fn file_digest(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Provenance and counts of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    /// Rejected inputs with reasons, e.g. traces that do not parse.
    pub rejections: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

/// Deterministic run id from the command, its configuration and its inputs.
pub fn run_id(command: &str, config_digest: &str, inputs: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(config_digest.as_bytes());
    for (k, v) in inputs {
        h.update([0]);
        h.update(k.as_bytes());
        h.update([1]);
        h.update(v.as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.jsonl");
        write_atomic(&p, b"first\n").unwrap();
        write_atomic(&p, b"second\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "second\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        write_jsonl(&p, &[serde_json::json!({"a": 1}), serde_json::json!({"a": 2})]).unwrap();
        let back: Vec<serde_json::Value> = read_jsonl(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(
            read_jsonl::<serde_json::Value>(&dir.path().join("missing"))
                .unwrap_err()
                .exit_code(),
            3
        );
        std::fs::write(&p, "{not json}\n").unwrap();
        assert!(matches!(
            read_jsonl::<serde_json::Value>(&p),
            Err(PipelineError::Data(_))
        ));
    }

    #[test]
    fn run_ids_are_stable() {
        let mut inputs = BTreeMap::new();
        inputs.insert("problems.jsonl".to_string(), "abc".to_string());
        let a = run_id("score", "cfg", &inputs);
        assert_eq!(a, run_id("score", "cfg", &inputs));
        assert_ne!(a, run_id("refine", "cfg", &inputs));
        assert_eq!(a.len(), 16);
    }
}
