//! The seven pipeline commands over files in the working directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;

use super::config::Settings;
use super::report::{distribution, render_report, ReportSummary};
use super::{file_digest, files, read_jsonl, run_id, write_atomic, write_jsonl, PipelineError, RunManifest};
use crate::dataset::{
    build_dpo_dual_threshold, build_dpo_maxmin, build_dpo_random_mid, build_sft, merge_final, Candidate, ProblemPool,
    Strategy,
};
use crate::formal::TacticLadder;
use crate::gateway::{
    generate_rollouts, Cache, Completer, Gateway, HttpBackend, HttpConfig, HttpEmbedTransport, LlmHandle, Mode,
    PromptLibrary, RemoteEmbedder,
};
use crate::premise::{Embedder, LexicalEmbedder};
use crate::prover::{BackendKind, IsabelleConfig, Prover};
use crate::refine::{refine_trace, select_for_refinement, RefinementRecord};
use crate::scoring::{LogicSource, ScoredRow, Scorer, ScoringError};
use crate::trace::{render_trace, Problem, RolloutRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Rollout,
    Score,
    Refine,
    BuildSft,
    BuildDpo,
    Report,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Self::Ingest,
        Self::Rollout,
        Self::Score,
        Self::Refine,
        Self::BuildSft,
        Self::BuildDpo,
        Self::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ingest => "ingest",
            Self::Rollout => "rollout",
            Self::Score => "score",
            Self::Refine => "refine",
            Self::BuildSft => "build-sft",
            Self::BuildDpo => "build-dpo",
            Self::Report => "report",
        }
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown command `{s}`"))
    }
}

/// Result of one command: its manifest and a human-readable summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub summary: String,
}

/// Pipeline over one working directory. A completion backend can be injected
/// (tests, scripted generators); otherwise live and record modes use HTTP.
pub struct Pipeline {
    pub settings: Settings,
    backend: Option<Arc<dyn Completer>>,
}

/// Bookkeeping shared by every command run.
struct Run {
    command: Command,
    config_digest: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    counts: BTreeMap<String, u64>,
    rejections: Vec<String>,
    started_at: String,
}

impl Run {
    fn new(command: Command, config_digest: String) -> Self {
        Self {
            command,
            config_digest,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            counts: BTreeMap::new(),
            rejections: Vec::new(),
            started_at: chrono::Utc::now().to_rfc3339(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<(), PipelineError> {
        self.inputs.insert(label(path), file_digest(path)?);
        Ok(())
    }

    fn id(&self) -> String {
        run_id(self.command.name(), &self.config_digest, &self.inputs)
    }

    fn count(&mut self, key: &str, n: usize) {
        self.counts.insert(key.to_string(), n as u64);
    }

    fn output<T: serde::Serialize>(&mut self, path: &Path, rows: &[T]) -> Result<(), PipelineError> {
        write_jsonl(path, rows)?;
        self.outputs.insert(label(path), file_digest(path)?);
        Ok(())
    }

    fn finish(self, dir: &Path, summary: String) -> Result<Outcome, PipelineError> {
        let manifest = RunManifest {
            run_id: self.id(),
            command: self.command.name().to_string(),
            config_digest: self.config_digest,
            inputs: self.inputs,
            outputs: self.outputs,
            counts: self.counts,
            rejections: self.rejections,
            started_at: self.started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
        };
        let path = dir.join(files::MANIFESTS).join(format!("{}.json", manifest.command));
        let body = serde_json::to_string_pretty(&manifest).map_err(|e| PipelineError::Data(e.to_string()))? + "\n";
        write_atomic(&path, body.as_bytes()).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        Ok(Outcome { manifest, summary })
    }
}

fn label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Response ids order numerically (`r2` before `r10`).
fn rid_order(rid: &str) -> (usize, &str) {
    (rid.len(), rid)
}

fn sort_rows(rows: &mut [ScoredRow]) {
    rows.sort_by(|a, b| {
        (a.problem_id.as_str(), rid_order(&a.response_id), a.refined).cmp(&(
            b.problem_id.as_str(),
            rid_order(&b.response_id),
            b.refined,
        ))
    });
}

fn sort_records(records: &mut [RolloutRecord]) {
    records.sort_by(|a, b| {
        (a.problem_id.as_str(), rid_order(&a.response_id)).cmp(&(b.problem_id.as_str(), rid_order(&b.response_id)))
    });
}

/// Reads a required input; a missing or empty file is an I/O error.
fn read_required<T: serde::de::DeserializeOwned>(run: &mut Run, path: &Path) -> Result<Vec<T>, PipelineError> {
    let rows: Vec<T> = read_jsonl(path)?;
    if rows.is_empty() {
        return Err(PipelineError::Io(format!("{}: no records", path.display())));
    }
    run.input(path)?;
    Ok(rows)
}

/// Reads an optional input; absent means empty.
fn read_optional<T: serde::de::DeserializeOwned>(run: &mut Run, path: &Path) -> Result<Vec<T>, PipelineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let rows = read_jsonl(path)?;
    run.input(path)?;
    Ok(rows)
}

fn problems_by_id(problems: Vec<Problem>) -> BTreeMap<String, Problem> {
    problems.into_iter().map(|p| (p.id.clone(), p)).collect()
}

/// Scoring failures that concern one trace only; everything else aborts.
fn per_trace(e: &ScoringError) -> bool {
    matches!(e, ScoringError::MissingTokenProbs { .. } | ScoringError::EmptyTrace)
}

impl Pipeline {
    pub fn new(settings: Settings) -> Result<Self, PipelineError> {
        settings.validate()?;
        Ok(Self {
            settings,
            backend: None,
        })
    }

    /// Uses `backend` instead of HTTP in live and record modes.
    pub fn with_backend(mut self, backend: Arc<dyn Completer>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn run(&self, command: Command) -> Result<Outcome, PipelineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.settings.workers)
            .build()
            .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
        pool.install(|| match command {
            Command::Ingest => self.ingest(),
            Command::Rollout => self.rollout(),
            Command::Score => self.score(),
            Command::Refine => self.refine(),
            Command::BuildSft => self.build_sft(),
            Command::BuildDpo => self.build_dpo(),
            Command::Report => self.report(),
        })
    }

    fn dir(&self) -> &Path {
        &self.settings.dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.settings.path(name)
    }

    fn http_config(&self) -> HttpConfig {
        HttpConfig {
            endpoint: self.settings.llm_endpoint.clone(),
            api_key_env: self.settings.api_key_env.clone(),
            text_pointer: self.settings.text_pointer.clone(),
            logprobs_pointer: self.settings.logprobs_pointer.clone(),
            timeout: Duration::from_secs_f64(self.settings.http_timeout_secs),
            retries: self.settings.retries,
        }
    }

    fn prompts(&self) -> Result<Arc<PromptLibrary>, PipelineError> {
        Ok(Arc::new(match &self.settings.prompts_dir {
            Some(dir) => PromptLibrary::with_overrides(dir)?,
            None => PromptLibrary::builtin(),
        }))
    }

    fn gateway(&self) -> Result<Arc<Gateway>, PipelineError> {
        let cache = Arc::new(Cache::open(&self.settings.cache_path())?);
        let backend: Option<Arc<dyn Completer>> = match (self.settings.mode, &self.backend) {
            (Mode::Replay, _) => None,
            (_, Some(b)) => Some(Arc::clone(b)),
            (_, None) => Some(Arc::new(HttpBackend::from_env(self.http_config())?)),
        };
        Ok(Arc::new(Gateway::new(self.settings.mode, cache, backend)?))
    }

    /// Keeps the cache file in canonical order after recording.
    fn settle_cache(&self, gateway: &Gateway) -> Result<(), PipelineError> {
        if gateway.mode() == Mode::Record {
            gateway.cache().rewrite_sorted()?;
        }
        Ok(())
    }

    fn scorer(&self, gateway: Arc<Gateway>) -> Result<Scorer, PipelineError> {
        let s = &self.settings;
        let budget = s.budget();
        let prover = match s.prover {
            BackendKind::Internal => Prover::internal(budget),
            BackendKind::Isabelle => Prover::isabelle(
                IsabelleConfig {
                    executable: s.isabelle_path.clone(),
                    ladder: TacticLadder {
                        methods: s.tactics.clone(),
                    },
                    max_procs: s.max_prover_procs,
                },
                budget,
            ),
        };
        prover.preflight()?;
        let embedder: Arc<dyn Embedder> = match s.embedder.as_str() {
            "remote" => Arc::new(RemoteEmbedder::new(Arc::new(HttpEmbedTransport::from_env(
                &s.embed_endpoint,
                &s.embed_model,
                &s.api_key_env,
                Duration::from_secs_f64(s.http_timeout_secs),
            )?))),
            _ => Arc::new(LexicalEmbedder),
        };
        let mut llm = LlmHandle::new(gateway, self.prompts()?, &s.formalizer_model);
        llm.max_tokens = s.max_tokens;
        Ok(Scorer {
            config: s.scoring_config(),
            embedder,
            prover: Arc::new(prover),
            llm,
        })
    }

    fn ingest(&self) -> Result<Outcome, PipelineError> {
        let mut run = Run::new(Command::Ingest, String::new());
        let input = self
            .settings
            .input
            .clone()
            .ok_or_else(|| PipelineError::Config("ingest needs `input`".into()))?;
        let raw: Vec<Problem> = read_required(&mut run, &input)?;
        let mut seen = BTreeSet::new();
        let mut problems = Vec::with_capacity(raw.len());
        for p in raw {
            if let Err(e) = p.validate() {
                run.rejections.push(e.to_string());
            } else if !seen.insert(p.id.clone()) {
                run.rejections.push(format!("duplicate problem id `{}`", p.id));
            } else {
                problems.push(p);
            }
        }
        if problems.is_empty() {
            return Err(PipelineError::Data(format!("{}: no valid problems", input.display())));
        }
        problems.sort_by(|a, b| a.id.cmp(&b.id));
        run.count("problems", problems.len());
        run.count("rejected", run.rejections.len());
        run.output(&self.path(files::PROBLEMS), &problems)?;
        let summary = format!(
            "ingested {} problems ({} rejected)",
            problems.len(),
            run.rejections.len()
        );
        run.finish(self.dir(), summary)
    }

    fn rollout(&self) -> Result<Outcome, PipelineError> {
        let plan = self.settings.rollout_plan();
        plan.validate()?;
        let mut run = Run::new(Command::Rollout, format!("{}:{:?}", self.settings.seed, plan));
        let problems: Vec<Problem> = read_required(&mut run, &self.path(files::PROBLEMS))?;
        let gateway = self.gateway()?;
        let prompts = self.prompts()?;
        let outputs = problems
            .par_iter()
            .map(|p| generate_rollouts(p, &plan, gateway.as_ref(), &prompts))
            .collect::<Result<Vec<_>, _>>();
        self.settle_cache(&gateway)?;
        let outputs = outputs?;
        let mut records = Vec::new();
        for out in outputs {
            for (rid, reason) in &out.rejected {
                run.rejections.push(format!("{}/{rid}: {reason}", out.set.problem_id));
            }
            records.extend(out.records);
        }
        sort_records(&mut records);
        run.count("problems", problems.len());
        run.count("rollouts", records.len());
        run.count("unparseable", run.rejections.len());
        run.output(&self.path(files::ROLLOUTS), &records)?;
        let summary = format!(
            "generated {} rollouts for {} problems ({} unparseable)",
            records.len(),
            problems.len(),
            run.rejections.len()
        );
        run.finish(self.dir(), summary)
    }

    fn score(&self) -> Result<Outcome, PipelineError> {
        let config = self.settings.scoring_config();
        let cfg = config.digest();
        let mut run = Run::new(Command::Score, cfg.clone());
        let problems = problems_by_id(read_required(&mut run, &self.path(files::PROBLEMS))?);
        let records: Vec<RolloutRecord> = read_required(&mut run, &self.path(files::ROLLOUTS))?;
        let run_id = run.id();
        let gateway = self.gateway()?;
        let scorer = self.scorer(Arc::clone(&gateway))?;
        // Outer error aborts the command; inner error rejects one trace.
        let results: Vec<Result<Result<ScoredRow, String>, PipelineError>> = records
            .par_iter()
            .map(|rec| {
                let label = format!("{}/{}", rec.problem_id, rec.response_id);
                let Some(problem) = problems.get(&rec.problem_id) else {
                    return Ok(Err(format!("{label}: unknown problem")));
                };
                let trace = match rec.to_trace() {
                    Ok(t) => t,
                    Err(e) => return Ok(Err(format!("{label}: {e}"))),
                };
                match scorer.score_trace(&trace, problem) {
                    Ok(s) => Ok(Ok(ScoredRow::from_score(&s.score, &cfg, &run_id, false))),
                    Err(e) if per_trace(&e) => Ok(Err(format!("{label}: {e}"))),
                    Err(e) => Err(e.into()),
                }
            })
            .collect();
        self.settle_cache(&gateway)?;
        let mut rows = Vec::new();
        for r in results {
            match r? {
                Ok(row) => rows.push(row),
                Err(msg) => run.rejections.push(msg),
            }
        }
        sort_rows(&mut rows);
        run.count("traces", records.len());
        run.count("scored", rows.len());
        run.count("rejected", run.rejections.len());
        let steps = || rows.iter().flat_map(|r| &r.steps);
        run.count("steps", steps().count());
        run.count(
            "verdict_valid",
            steps().filter(|s| s.src == LogicSource::Prover && s.lv == 1.0).count(),
        );
        run.count(
            "verdict_invalid",
            steps().filter(|s| s.src == LogicSource::Prover && s.lv < 1.0).count(),
        );
        run.count(
            "verdict_fallback",
            steps().filter(|s| s.src == LogicSource::Fallback).count(),
        );
        run.output(&self.path(files::SCORED), &rows)?;
        let mean = rows.iter().map(|r| r.score).sum::<f64>() / rows.len().max(1) as f64;
        let summary = format!(
            "scored {} traces ({} rejected), mean LogicScore {mean:.4}",
            rows.len(),
            run.rejections.len()
        );
        run.finish(self.dir(), summary)
    }

    fn refine(&self) -> Result<Outcome, PipelineError> {
        let config = self.settings.scoring_config();
        let cfg = config.digest();
        let mut run = Run::new(
            Command::Refine,
            format!("{cfg}:{}:{}", self.settings.refine_k, self.settings.seed),
        );
        let problems = problems_by_id(read_required(&mut run, &self.path(files::PROBLEMS))?);
        let records: Vec<RolloutRecord> = read_required(&mut run, &self.path(files::ROLLOUTS))?;
        let scored: Vec<ScoredRow> = read_required(&mut run, &self.path(files::SCORED))?;
        if let Some(row) = scored.iter().find(|r| r.cfg != cfg) {
            return Err(PipelineError::Config(format!(
                "scored.jsonl was produced with scoring config {}, current config is {cfg}",
                row.cfg
            )));
        }
        let run_id = run.id();

        let mut by_problem: BTreeMap<&str, Vec<ScoredRow>> = BTreeMap::new();
        for r in scored.iter().filter(|r| !r.refined) {
            by_problem.entry(r.problem_id.as_str()).or_default().push(r.clone());
        }
        let record_of: BTreeMap<(&str, &str), &RolloutRecord> = records
            .iter()
            .map(|r| ((r.problem_id.as_str(), r.response_id.as_str()), r))
            .collect();
        let mut jobs: Vec<(&Problem, &RolloutRecord)> = Vec::new();
        for (pid, rows) in &by_problem {
            let Some(problem) = problems.get(*pid) else { continue };
            for rid in select_for_refinement(rows, self.settings.refine_k, self.settings.seed) {
                if let Some(rec) = record_of.get(&(*pid, rid.as_str())) {
                    jobs.push((problem, rec));
                }
            }
        }

        let gateway = self.gateway()?;
        let scorer = self.scorer(Arc::clone(&gateway))?;
        let max_iterations = self.settings.max_iterations;
        type Refined = (Vec<RefinementRecord>, Option<(RolloutRecord, ScoredRow)>);
        let results: Vec<Result<Refined, PipelineError>> = jobs
            .par_iter()
            .map(|(problem, rec)| {
                let trace = rec.to_trace().map_err(|e| PipelineError::Data(e.to_string()))?;
                let original = scorer.score_trace(&trace, problem)?;
                let refined = refine_trace(&trace, &original, problem, &scorer, max_iterations)?;
                let improved = refined.records.iter().any(|r| r.final_verdict.logic_ok);
                let emitted = improved.then(|| {
                    let record = RolloutRecord {
                        text: render_trace(&refined.trace),
                        refined: true,
                        ..(*rec).clone()
                    };
                    (
                        record,
                        ScoredRow::from_score(&refined.scored.score, &cfg, &run_id, true),
                    )
                });
                Ok((refined.records, emitted))
            })
            .collect();
        self.settle_cache(&gateway)?;

        let mut refinements = Vec::new();
        let mut refined_records = Vec::new();
        let mut refined_rows = Vec::new();
        for r in results {
            let (recs, emitted) = r?;
            refinements.extend(recs);
            if let Some((record, row)) = emitted {
                refined_records.push(record);
                refined_rows.push(row);
            }
        }
        refinements.sort_by(|a, b| {
            (a.problem_id.as_str(), rid_order(&a.response_id), a.step_index).cmp(&(
                b.problem_id.as_str(),
                rid_order(&b.response_id),
                b.step_index,
            ))
        });
        sort_records(&mut refined_records);
        sort_rows(&mut refined_rows);

        let replaced: BTreeMap<(String, String), &ScoredRow> = refined_rows
            .iter()
            .map(|r| ((r.problem_id.clone(), r.response_id.clone()), r))
            .collect();
        let mut after: Vec<ScoredRow> = scored
            .iter()
            .filter(|r| !r.refined)
            .map(|r| {
                replaced
                    .get(&(r.problem_id.clone(), r.response_id.clone()))
                    .map(|x| (*x).clone())
                    .unwrap_or_else(|| r.clone())
            })
            .collect();
        sort_rows(&mut after);

        run.count("selected", jobs.len());
        run.count("steps_refined", refinements.len());
        run.count(
            "steps_fixed",
            refinements.iter().filter(|r| r.final_verdict.logic_ok).count(),
        );
        run.count("traces_improved", refined_rows.len());
        run.output(&self.path(files::REFINEMENTS), &refinements)?;
        run.output(&self.path(files::REFINED_ROLLOUTS), &refined_records)?;
        run.output(&self.path(files::REFINED_SCORED), &refined_rows)?;
        run.output(&self.path(files::SCORED_AFTER), &after)?;
        let summary = format!(
            "refined {} steps in {} traces; {} steps now verify, {} traces improved",
            refinements.len(),
            jobs.len(),
            run.counts["steps_fixed"],
            refined_rows.len()
        );
        run.finish(self.dir(), summary)
    }

    /// Candidate pools over `D_r ∪ D_refined`.
    fn pools(&self, run: &mut Run) -> Result<Vec<ProblemPool>, PipelineError> {
        let problems = problems_by_id(read_required(run, &self.path(files::PROBLEMS))?);
        let mut records: Vec<RolloutRecord> = read_required(run, &self.path(files::ROLLOUTS))?;
        records.extend(read_optional::<RolloutRecord>(
            run,
            &self.path(files::REFINED_ROLLOUTS),
        )?);
        let scored: Vec<ScoredRow> = read_required(run, &self.path(files::SCORED))?;
        let refined: Vec<ScoredRow> = read_optional(run, &self.path(files::REFINED_SCORED))?;
        let merged = merge_final(scored, refined).map_err(|e| PipelineError::Data(e.to_string()))?;
        let text_of: BTreeMap<(&str, &str, bool), &RolloutRecord> = records
            .iter()
            .map(|r| ((r.problem_id.as_str(), r.response_id.as_str(), r.refined), r))
            .collect();
        let prompts = self.prompts()?;
        let mut pools: BTreeMap<String, ProblemPool> = BTreeMap::new();
        for row in &merged {
            let problem = problems
                .get(&row.problem_id)
                .ok_or_else(|| PipelineError::Data(format!("scored row for unknown problem `{}`", row.problem_id)))?;
            let rec = text_of
                .get(&(row.problem_id.as_str(), row.response_id.as_str(), row.refined))
                .ok_or_else(|| {
                    PipelineError::Data(format!("no rollout text for {}/{}", row.problem_id, row.response_id))
                })?;
            let trace = rec.to_trace().map_err(|e| PipelineError::Data(e.to_string()))?;
            let pool = match pools.entry(row.problem_id.clone()) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => e.insert(ProblemPool {
                    problem_id: row.problem_id.clone(),
                    prompt: prompts.rollout_prompt(problem)?,
                    candidates: Vec::new(),
                }),
            };
            pool.candidates.push(Candidate {
                response_id: row.response_id.clone(),
                refined: row.refined,
                score: row.score,
                rv: row.rv,
                target: render_trace(&trace),
            });
        }
        let pools: Vec<ProblemPool> = pools.into_values().collect();
        run.count("problems", pools.len());
        run.count("candidates", pools.iter().map(|p| p.candidates.len()).sum());
        Ok(pools)
    }

    fn build_sft(&self) -> Result<Outcome, PipelineError> {
        let mut run = Run::new(Command::BuildSft, String::new());
        let pools = self.pools(&mut run)?;
        let sft = build_sft(&pools);
        run.count("records", sft.len());
        run.output(&self.path(files::SFT), &sft)?;
        let summary = format!("wrote {} SFT records", sft.len());
        run.finish(self.dir(), summary)
    }

    fn build_dpo(&self) -> Result<Outcome, PipelineError> {
        let s = &self.settings;
        let mut run = Run::new(
            Command::BuildDpo,
            format!("{:?}:{}:{}:{}", s.strategy, s.hi, s.lo, s.seed),
        );
        let pools = self.pools(&mut run)?;
        let pairs = match s.strategy {
            Strategy::Maxmin => build_dpo_maxmin(&pools),
            Strategy::DualThreshold => {
                build_dpo_dual_threshold(&pools, s.hi, s.lo).map_err(|e| PipelineError::Config(e.to_string()))?
            }
            Strategy::RandomMid => build_dpo_random_mid(&pools, s.seed),
        };
        run.count("pairs", pairs.len());
        run.output(&self.path(files::DPO), &pairs)?;
        let summary = format!("wrote {} preference pairs", pairs.len());
        run.finish(self.dir(), summary)
    }

    fn report(&self) -> Result<Outcome, PipelineError> {
        let mut run = Run::new(Command::Report, String::new());
        let before_path = self.settings.scored.clone().unwrap_or_else(|| self.path(files::SCORED));
        let after_path = match (&self.settings.after, &self.settings.scored) {
            (Some(p), _) => Some(p.clone()),
            (None, None) => Some(self.path(files::SCORED_AFTER)).filter(|p| p.exists()),
            (None, Some(_)) => None,
        };
        let before: Vec<ScoredRow> = read_required(&mut run, &before_path)?;
        let before = distribution(&before);
        let after = match &after_path {
            Some(p) => Some(distribution(&read_required::<ScoredRow>(&mut run, p)?)),
            None => None,
        };
        let summary = ReportSummary {
            mean_delta: after.as_ref().map(|a| a.mean - before.mean),
            before,
            after,
        };
        let path = self.path(files::REPORT);
        let body = serde_json::to_string_pretty(&summary).map_err(|e| PipelineError::Data(e.to_string()))? + "\n";
        write_atomic(&path, body.as_bytes()).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        run.outputs.insert(label(&path), file_digest(&path)?);
        run.count("traces", summary.before.traces as usize);
        run.finish(self.dir(), render_report(&summary))
    }
}
