//! Step-level logical validity scoring of natural-language reasoning traces.
//!
//! Every step of a trace is checked twice: its premises are compared with
//! the problem's premises (premise validity), and the step is formalized and
//! handed to a theorem prover (logic validity). Steps the prover cannot read
//! fall back to the model's own token confidence. Per-step scores average
//! into a trace's reasoning validity, which combines with answer correctness
//! into its LogicScore. Failing steps can be refined from prover feedback,
//! and scored pools become SFT targets and DPO preference pairs.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod formal;
pub mod gateway;
pub mod pipeline;
pub mod premise;
pub mod prover;
pub mod refine;
pub mod rng;
pub mod scoring;
pub mod trace;

pub use dataset::{
    build_dpo_dual_threshold, build_dpo_maxmin, build_dpo_random_mid, build_sft, merge_final, Candidate, DatasetError,
    PreferencePair, ProblemPool, SftRecord, Strategy,
};
pub use formal::{LogicTheory, Provenance};
pub use gateway::{
    Cache, Completer, Completion, CompletionRequest, FnBackend, Gateway, GatewayError, LlmHandle, Mode, ModelSlot,
    PromptLibrary, RolloutPlan, Sampling,
};
pub use pipeline::{Command, Outcome, Pipeline, PipelineError, RunManifest, Settings};
pub use premise::{premise_validity, Aggregation, Embedder, Embedding, EmbeddingError, LexicalEmbedder};
pub use prover::{BackendKind, ProofBudget, ProofOutcome, Prover, ProverError, ProverInput, ProverVerdict};
pub use refine::{refine_step, refine_trace, select_for_refinement, RefinedTrace, RefinementRecord};
pub use scoring::{
    conf, logic_score, logic_validity, outcome_validity, reasoning_validity, LogicSource, ScoredRow, ScoredTrace,
    Scorer, ScoringConfig, ScoringError, StepRow, StepScore, TraceScore, Weights,
};
pub use trace::{parse_trace, render_trace, Problem, ResponseTrace, RolloutRecord, RolloutSet, Step, TraceError};
