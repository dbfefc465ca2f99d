//! Regenerates the mini corpus under `fixtures/mini`: the problem file, the
//! recorded completion cache (from the scripted model), the shared config and
//! the golden outputs of a replayed run.
//!
//! ```text
//! cargo run -p stepproof --example mini_corpus [-- OUT_DIR]
//! ```

mod scripted;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use stepproof::pipeline::{files, write_jsonl};
use stepproof::{Command, Pipeline, PipelineError, Settings};

/// Files compared byte for byte between runs.
const GOLDEN: [&str; 8] = [
    files::ROLLOUTS,
    files::SCORED,
    files::REFINEMENTS,
    files::REFINED_SCORED,
    files::SCORED_AFTER,
    files::SFT,
    files::DPO,
    files::REPORT,
];

fn settings(out: &Path, work: &Path, mode: &str) -> Result<Settings, PipelineError> {
    let mut s = Settings::default();
    s.apply_file(&out.join("mini.conf"))?;
    s.set("dir", &work.display().to_string())?;
    s.set("input", &out.join("problems_input.jsonl").display().to_string())?;
    s.set("cache", &out.join("cache.jsonl").display().to_string())?;
    s.set("mode", mode)?;
    Ok(s)
}

fn run_all(pipeline: &Pipeline) -> Result<(), PipelineError> {
    for command in Command::ALL {
        let outcome = pipeline.run(command)?;
        eprintln!(
            "{:>9}: {}",
            command.name(),
            outcome.summary.lines().next().unwrap_or("")
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini"));
    std::fs::create_dir_all(out.join("golden"))?;
    write_jsonl(&out.join("problems_input.jsonl"), &scripted::problems())?;
    std::fs::write(
        out.join("mini.conf"),
        "# Mini corpus: 24 problems x 8 scripted rollouts.\nseed = 7\nrefine_k = 2\nmax_iterations = 3\nworkers = 4\n",
    )?;
    let cache = out.join("cache.jsonl");
    if cache.exists() {
        std::fs::remove_file(&cache)?;
    }

    let record = tempfile::tempdir()?;
    let pipeline = Pipeline::new(settings(&out, record.path(), "record")?)?
        .with_backend(Arc::new(scripted::ScriptedModel::default()));
    run_all(&pipeline)?;

    let replay = tempfile::tempdir()?;
    run_all(&Pipeline::new(settings(&out, replay.path(), "replay")?)?)?;
    for name in GOLDEN {
        let (a, b) = (record.path().join(name), replay.path().join(name));
        if std::fs::read(&a)? != std::fs::read(&b)? {
            return Err(format!("{name}: record and replay runs differ").into());
        }
        std::fs::copy(&b, out.join("golden").join(name))?;
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}
