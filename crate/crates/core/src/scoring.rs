//! Step and trace scores: logic validity with the confidence fallback,
//! reasoning validity, outcome validity, LogicScore and the token-confidence
//! baseline. [`Scorer`] runs the whole per-trace procedure.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::formal::{axiom_provenance, formalize, parse_lif, soft_unify, Provenance};
use crate::gateway::{GatewayError, LlmHandle};
use crate::premise::{premise_validity, Aggregation, Embedder, EmbeddingError};
use crate::prover::{BackendKind, ProofBudget, Prover, ProverError, ProverInput, ProverVerdict};
use crate::trace::{Problem, ResponseTrace, Step};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("step {step}: no token probabilities and no default confidence configured")]
    MissingTokenProbs { step: usize },
    #[error("trace has no steps")]
    EmptyTrace,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Weights of reasoning validity (`w1`) and outcome validity (`w2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w1: f64,
    pub w2: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { w1: 0.5, w2: 0.5 }
    }
}

impl Weights {
    pub fn new(w1: f64, w2: f64) -> Result<Self, ScoringError> {
        let w = Self { w1, w2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return Err(ScoringError::InvalidWeights("weights must be non-negative".into()));
        }
        if (self.w1 + self.w2 - 1.0).abs() > 1e-9 {
            return Err(ScoringError::InvalidWeights(format!(
                "weights must sum to 1, got {} + {}",
                self.w1, self.w2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogicSource {
    Prover,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub step_index: usize,
    pub premise_validity: f64,
    pub logic_validity: f64,
    pub logic_source: LogicSource,
    pub verdict: ProverVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceScore {
    pub problem_id: String,
    pub response_id: String,
    pub step_scores: Vec<StepScore>,
    pub reasoning_validity: f64,
    pub outcome_validity: Option<u8>,
    pub logic_score: f64,
}

/// Mean token probability of the step's inference.
pub fn conf(trace: &ResponseTrace, step_index: usize, default_conf: Option<f64>) -> Result<f64, ScoringError> {
    let probs: Vec<f64> = trace
        .token_probs
        .iter()
        .flatten()
        .filter(|s| s.step_index == step_index)
        .map(|s| s.prob)
        .collect();
    if probs.is_empty() {
        return default_conf.ok_or(ScoringError::MissingTokenProbs { step: step_index });
    }
    Ok(probs.iter().sum::<f64>() / probs.len() as f64)
}

/// 1 for a proved step, 0 for a well-formed unproved step, the inference
/// confidence when the formalization is ill-formed.
pub fn logic_validity(verdict: &ProverVerdict, conf_value: Option<f64>) -> Result<f64, ScoringError> {
    match (verdict.syntax_ok, verdict.logic_ok) {
        (true, true) => Ok(1.0),
        (true, false) => Ok(0.0),
        (false, _) => conf_value.ok_or(ScoringError::MissingTokenProbs { step: 0 }),
    }
}

/// Mean over steps of the average of premise and logic validity.
pub fn reasoning_validity(step_scores: &[StepScore]) -> Result<f64, ScoringError> {
    if step_scores.is_empty() {
        return Err(ScoringError::EmptyTrace);
    }
    let total: f64 = step_scores
        .iter()
        .map(|s| (s.premise_validity + s.logic_validity) / 2.0)
        .sum();
    Ok(total / step_scores.len() as f64)
}

/// Trim, strip one pair of surrounding brackets, trim again, case-fold.
pub fn normalize_answer(answer: &str) -> String {
    let mut s = answer.trim();
    for (open, close) in [('[', ']'), ('(', ')')] {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            s = inner.trim();
            break;
        }
    }
    s.to_lowercase()
}

pub fn outcome_validity(answer: &str, gold: &str) -> u8 {
    u8::from(normalize_answer(answer) == normalize_answer(gold))
}

/// `w1·rv + w2·ov`, or `rv` alone when there is no outcome signal.
pub fn logic_score(rv: f64, ov: Option<u8>, weights: &Weights) -> f64 {
    match ov {
        Some(ov) => weights.w1 * rv + weights.w2 * f64::from(ov),
        None => rv,
    }
}

/// Token-confidence baseline: mean step confidence, plus answer accuracy when
/// a gold label exists.
pub fn confidence_reward(
    trace: &ResponseTrace,
    gold: Option<&str>,
    default_conf: Option<f64>,
) -> Result<f64, ScoringError> {
    if trace.steps.is_empty() {
        return Err(ScoringError::EmptyTrace);
    }
    let mut total = 0.0;
    for s in &trace.steps {
        total += conf(trace, s.index, default_conf)?;
    }
    let s = total / trace.steps.len() as f64;
    Ok(match gold {
        Some(g) => s + f64::from(outcome_validity(&trace.answer, g)),
        None => s,
    })
}

/// Everything that changes scores; its digest tags every scored record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoringConfig {
    pub weights: Weights,
    pub aggregation: Aggregation,
    pub no_ground_truth: bool,
    pub default_conf: Option<f64>,
    pub prover: BackendKind,
    pub max_depth: u32,
    pub timeout_ms: u64,
    pub embedder: String,
    pub formalizer_model: String,
    pub soft_unify: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        let budget = ProofBudget::internal_default();
        Self {
            weights: Weights::default(),
            aggregation: Aggregation::MeanOfMax,
            no_ground_truth: false,
            default_conf: Some(0.5),
            prover: BackendKind::Internal,
            max_depth: budget.max_depth,
            timeout_ms: budget.timeout.as_millis() as u64,
            embedder: "lexical".into(),
            formalizer_model: "formalizer".into(),
            soft_unify: true,
        }
    }
}

impl ScoringConfig {
    /// Short stable digest of the configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Per-step artifacts of one scoring pass, reused by refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEvaluation {
    /// The step after soft unification.
    pub step: Step,
    pub lif: String,
    pub verdict: ProverVerdict,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrace {
    pub score: TraceScore,
    pub evaluations: Vec<StepEvaluation>,
}

/// The full per-trace scoring procedure with its service handles.
pub struct Scorer {
    pub config: ScoringConfig,
    pub embedder: Arc<dyn Embedder>,
    pub prover: Arc<Prover>,
    pub llm: LlmHandle,
}

impl Scorer {
    /// Formalizes `step` as is and checks the theory.
    pub fn verify(&self, step: &Step) -> Result<(String, ProverVerdict, Vec<Provenance>), ScoringError> {
        let lif = formalize(step, &self.llm)?;
        let provenance = parse_lif(&lif).map(|t| axiom_provenance(&t, step)).unwrap_or_default();
        let verdict = match self.prover.check(ProverInput::Text(&lif)) {
            Ok(v) => v,
            Err(ProverError::BackendUnavailable(msg)) => {
                log::warn!(
                    "step {}: prover unavailable, using confidence fallback: {msg}",
                    step.index
                );
                ProverVerdict::syntax_error(self.prover.kind, vec![format!("BackendUnavailable: {msg}")])
            }
        };
        Ok((lif, verdict, provenance))
    }

    /// Soft unification, formalization and verification of one step.
    pub fn evaluate_step(&self, step: &Step, problem: &Problem) -> Result<StepEvaluation, ScoringError> {
        let unified = if self.config.soft_unify {
            soft_unify(step, problem, &self.llm)?
        } else {
            step.clone()
        };
        let (lif, verdict, provenance) = self.verify(&unified)?;
        Ok(StepEvaluation {
            step: unified,
            lif,
            verdict,
            provenance,
        })
    }

    pub fn score_trace(&self, trace: &ResponseTrace, problem: &Problem) -> Result<ScoredTrace, ScoringError> {
        self.score_trace_with(trace, problem, &BTreeMap::new())
    }

    /// Scores `trace`, taking the evaluation of any step listed in `known`
    /// as given (refined steps carry the verdict of their last iteration).
    pub fn score_trace_with(
        &self,
        trace: &ResponseTrace,
        problem: &Problem,
        known: &BTreeMap<usize, StepEvaluation>,
    ) -> Result<ScoredTrace, ScoringError> {
        if trace.steps.is_empty() {
            return Err(ScoringError::EmptyTrace);
        }
        let mut step_scores = Vec::with_capacity(trace.steps.len());
        let mut evaluations = Vec::with_capacity(trace.steps.len());
        for step in &trace.steps {
            let pv = premise_validity(step, &problem.premises, self.embedder.as_ref(), self.config.aggregation)?;
            let eval = match known.get(&step.index) {
                Some(e) => e.clone(),
                None => self.evaluate_step(step, problem)?,
            };
            let (lv, source) = if eval.verdict.syntax_ok {
                (logic_validity(&eval.verdict, None)?, LogicSource::Prover)
            } else {
                let c = conf(trace, step.index, self.config.default_conf)?;
                (logic_validity(&eval.verdict, Some(c))?, LogicSource::Fallback)
            };
            step_scores.push(StepScore {
                step_index: step.index,
                premise_validity: pv,
                logic_validity: lv,
                logic_source: source,
                verdict: eval.verdict.clone(),
            });
            evaluations.push(eval);
        }
        let rv = reasoning_validity(&step_scores)?;
        let ov = match (&problem.gold_answer, self.config.no_ground_truth) {
            (Some(gold), false) => Some(outcome_validity(&trace.answer, gold)),
            _ => None,
        };
        Ok(ScoredTrace {
            score: TraceScore {
                problem_id: trace.problem_id.clone(),
                response_id: trace.response_id.clone(),
                step_scores,
                reasoning_validity: rv,
                outcome_validity: ov,
                logic_score: logic_score(rv, ov, &self.config.weights),
            },
            evaluations,
        })
    }
}

/// Six decimal places keep serialized scores byte-stable.
pub fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub i: usize,
    pub pv: f64,
    pub lv: f64,
    pub src: LogicSource,
}

impl StepRow {
    /// A step the prover did not accept (ill-formed or unproved).
    pub fn failed(&self) -> bool {
        self.src == LogicSource::Fallback || self.lv < 1.0
    }
}

/// One line of `scored.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRow {
    pub problem_id: String,
    pub response_id: String,
    pub steps: Vec<StepRow>,
    pub rv: f64,
    pub ov: Option<u8>,
    pub score: f64,
    /// Digest of the scoring configuration.
    pub cfg: String,
    /// Run that produced the row.
    pub run: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub refined: bool,
}

impl ScoredRow {
    pub fn from_score(score: &TraceScore, cfg: &str, run: &str, refined: bool) -> Self {
        Self {
            problem_id: score.problem_id.clone(),
            response_id: score.response_id.clone(),
            steps: score
                .step_scores
                .iter()
                .map(|s| StepRow {
                    i: s.step_index,
                    pv: round6(s.premise_validity),
                    lv: round6(s.logic_validity),
                    src: s.logic_source,
                })
                .collect(),
            rv: round6(score.reasoning_validity),
            ov: score.outcome_validity,
            score: round6(score.logic_score),
            cfg: cfg.to_string(),
            run: run.to_string(),
            refined,
        }
    }

    pub fn key(&self) -> (String, String, bool) {
        (self.problem_id.clone(), self.response_id.clone(), self.refined)
    }

    /// `rv` and `score` agree with the step rows (up to rounding).
    pub fn is_consistent(&self, weights: &Weights) -> bool {
        if self.steps.is_empty() {
            return false;
        }
        let rv = self.steps.iter().map(|s| (s.pv + s.lv) / 2.0).sum::<f64>() / self.steps.len() as f64;
        let score = logic_score(self.rv, self.ov, weights);
        (rv - self.rv).abs() <= 2e-6 && (score - self.score).abs() <= 2e-6
    }
}
