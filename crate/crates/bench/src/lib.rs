//! Workload builders shared by the benchmarks.

use std::path::{Path, PathBuf};

use stepproof::formal::parse_lif;
use stepproof::{Command, LogicTheory, Pipeline, PipelineError, Settings, Step};

/// The committed mini corpus (problems, recorded cache, config).
pub fn mini_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/mini")
}

/// `p0(a)` and a chain of `len` universally quantified implications up to
/// `p<len>(a)`, padded with as many irrelevant rules. With `provable = false`
/// the goal is an unrelated atom, so the search must saturate.
pub fn chain_theory(len: usize, provable: bool) -> LogicTheory {
    let mut text = String::from("axiom: p0(a)\n");
    for i in 0..len {
        text.push_str(&format!("axiom: forall X. p{i}(X) -> p{}(X)\n", i + 1));
        text.push_str(&format!("axiom: forall X. q{i}(X) & p{i}(X) -> r{i}(X)\n"));
    }
    if provable {
        text.push_str(&format!("goal: p{len}(a)\n"));
    } else {
        text.push_str("goal: r0(b)\n");
    }
    parse_lif(&text).expect("generated theory parses")
}

/// A step citing `n` premise sentences, and the `2n` problem premises it is
/// scored against (half of them near-copies of the citations).
pub fn premise_workload(n: usize) -> (Step, Vec<String>) {
    let animals = ["dog", "cat", "horse", "bird", "cow", "fox", "owl", "bee"];
    let traits = ["warm", "quick", "quiet", "loyal", "small", "brave", "calm", "wild"];
    let cited: Vec<String> = (0..n)
        .map(|i| format!("Every {} is {}.", animals[i % 8], traits[(i / 8 + i) % 8]))
        .collect();
    let mut premises: Vec<String> = cited.iter().map(|s| s.replace("Every", "Each")).collect();
    premises.extend((0..n).map(|i| format!("Entity number {i} lives somewhere far away.")));
    let step = Step {
        index: 1,
        premise_text: cited.join(" "),
        soft_unification: String::new(),
        conclusion: "Rex is warm.".into(),
    };
    (step, premises)
}

/// Replay-mode settings for the mini corpus with `dir` as working directory.
pub fn replay_settings(dir: &Path) -> Result<Settings, PipelineError> {
    let corpus = mini_corpus();
    let mut s = Settings::default();
    s.apply_file(&corpus.join("mini.conf"))?;
    s.set("dir", &dir.display().to_string())?;
    s.set("input", &corpus.join("problems_input.jsonl").display().to_string())?;
    s.set("cache", &corpus.join("cache.jsonl").display().to_string())?;
    s.set("mode", "replay")?;
    Ok(s)
}

/// Runs `commands` in order over the working directory `dir`.
pub fn run(dir: &Path, commands: &[Command]) -> Result<(), PipelineError> {
    let pipeline = Pipeline::new(replay_settings(dir)?)?;
    for &c in commands {
        pipeline.run(c)?;
    }
    Ok(())
}
