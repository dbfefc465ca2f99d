//! Refinement of failing steps from prover feedback: the LLM revises a
//! step's assumptions, the step is re-formalized and re-checked, and the
//! trace is re-scored.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::formal::{join_assumptions, reply_sentences};
use crate::gateway::prompts;
use crate::prover::ProverVerdict;
use crate::rng::substream;
use crate::scoring::{ScoredRow, ScoredTrace, Scorer, ScoringError, StepEvaluation};
use crate::trace::{Problem, ResponseTrace, Step};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementIteration {
    /// Prover messages the revision was asked to address.
    pub diagnostics: Vec<String>,
    pub revised_assumptions: String,
    pub verdict: ProverVerdict,
}

/// One line of `refinements.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub problem_id: String,
    pub response_id: String,
    pub step_index: usize,
    pub iterations: Vec<RefinementIteration>,
    pub final_verdict: ProverVerdict,
    pub budget_exhausted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Outcome of refining one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRefinement {
    /// The step to use from now on: the revised step when it verified,
    /// otherwise the original.
    pub evaluation: StepEvaluation,
    pub record: RefinementRecord,
}

impl StepRefinement {
    pub fn improved(&self) -> bool {
        self.record.final_verdict.logic_ok
    }
}

/// Revises `initial.step`'s assumptions until the prover accepts the step or
/// `max_iterations` revisions have been tried. Premise and conclusion are
/// never touched. A gateway error stops the loop early and is noted on the
/// record.
pub fn refine_step(
    initial: &StepEvaluation,
    problem: &Problem,
    response_id: &str,
    scorer: &Scorer,
    max_iterations: usize,
) -> StepRefinement {
    let premises = problem.premises.join(" ");
    let mut current = initial.clone();
    let mut iterations = Vec::new();
    let mut error = None;
    for _ in 0..max_iterations.max(1) {
        let diagnostics = current.verdict.diagnostics.join("\n");
        let reply = scorer.llm.ask(
            prompts::REFINE,
            &[
                ("{{premises}}", &premises),
                ("{{step_premise}}", &current.step.premise_text),
                (
                    "{{assumptions}}",
                    if current.step.soft_unification.is_empty() {
                        "(none)"
                    } else {
                        &current.step.soft_unification
                    },
                ),
                ("{{conclusion}}", &current.step.conclusion),
                ("{{lif}}", current.lif.trim_end()),
                ("{{diagnostics}}", &diagnostics),
            ],
        );
        let reply = match reply {
            Ok(r) => r,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        let revised = reply_sentences(&reply);
        let candidate = Step {
            soft_unification: if revised.is_empty() {
                current.step.soft_unification.clone()
            } else {
                join_assumptions(&revised)
            },
            ..current.step.clone()
        };
        let (lif, verdict, provenance) = match scorer.verify(&candidate) {
            Ok(v) => v,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        iterations.push(RefinementIteration {
            diagnostics: current.verdict.diagnostics.clone(),
            revised_assumptions: candidate.soft_unification.clone(),
            verdict: verdict.clone(),
        });
        current = StepEvaluation {
            step: candidate,
            lif,
            verdict,
            provenance,
        };
        if current.verdict.logic_ok {
            break;
        }
    }
    let final_verdict = iterations
        .last()
        .map(|it| it.verdict.clone())
        .unwrap_or_else(|| initial.verdict.clone());
    let ok = final_verdict.logic_ok;
    let record = RefinementRecord {
        problem_id: problem.id.clone(),
        response_id: response_id.to_string(),
        step_index: initial.step.index,
        budget_exhausted: !ok && error.is_none(),
        iterations,
        final_verdict,
        error,
    };
    StepRefinement {
        evaluation: if ok { current } else { initial.clone() },
        record,
    }
}

/// Response ids (sorted) of up to `k` traces with at least one failing step,
/// sampled uniformly without replacement from the `refine` sub-stream.
pub fn select_for_refinement(rows: &[ScoredRow], k: usize, seed: u64) -> Vec<String> {
    let mut candidates: Vec<&ScoredRow> = rows
        .iter()
        .filter(|r| !r.refined && r.steps.iter().any(|s| s.failed()))
        .collect();
    candidates.sort_by(|a, b| a.response_id.cmp(&b.response_id));
    candidates.dedup_by(|a, b| a.response_id == b.response_id);
    if candidates.len() <= k {
        return candidates.iter().map(|r| r.response_id.clone()).collect();
    }
    let problem_id = candidates[0].problem_id.clone();
    let mut rng = substream(seed, "refine", &problem_id);
    let mut picked: Vec<String> = sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i].response_id.clone())
        .collect();
    picked.sort();
    picked
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedTrace {
    pub trace: ResponseTrace,
    pub scored: ScoredTrace,
    pub records: Vec<RefinementRecord>,
}

/// Refines every failing step of `trace` in index order and re-scores the
/// result. `scored` is the trace's original scoring pass.
pub fn refine_trace(
    trace: &ResponseTrace,
    scored: &ScoredTrace,
    problem: &Problem,
    scorer: &Scorer,
    max_iterations: usize,
) -> Result<RefinedTrace, ScoringError> {
    let mut refined = trace.clone();
    let mut known: BTreeMap<usize, StepEvaluation> = BTreeMap::new();
    let mut records = Vec::new();
    for (pos, eval) in scored.evaluations.iter().enumerate() {
        let index = eval.step.index;
        if eval.verdict.logic_ok {
            known.insert(index, eval.clone());
            continue;
        }
        let outcome = refine_step(eval, problem, &trace.response_id, scorer, max_iterations);
        if outcome.improved() {
            refined.steps[pos].soft_unification = outcome.evaluation.step.soft_unification.clone();
        }
        known.insert(index, outcome.evaluation);
        records.push(outcome.record);
    }
    let rescored = scorer.score_trace_with(&refined, problem, &known)?;
    Ok(RefinedTrace {
        trace: refined,
        scored: rescored,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{LogicSource, StepRow};

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

    #[test]
    fn selection_is_seeded_and_clamped() {
        let rows: Vec<ScoredRow> = (0..8).map(|i| row(&format!("r{i}"), i % 8 < 5)).collect();
        let a = select_for_refinement(&rows, 2, 7);
        assert_eq!(a.len(), 2);
        assert_eq!(a, select_for_refinement(&rows, 2, 7));
        assert!(a.iter().all(|r| ["r0", "r1", "r2", "r3", "r4"].contains(&r.as_str())));
        let all_valid: Vec<ScoredRow> = (0..8).map(|i| row(&format!("r{i}"), false)).collect();
        assert!(select_for_refinement(&all_valid, 2, 7).is_empty());
        let three: Vec<ScoredRow> = (0..8).map(|i| row(&format!("r{i}"), i < 3)).collect();
        assert_eq!(select_for_refinement(&three, 8, 7), vec!["r0", "r1", "r2"]);
    }

    #[test]
    fn fallback_steps_count_as_failing() {
        let mut r = row("r0", false);
        r.steps[0].src = LogicSource::Fallback;
        assert_eq!(select_for_refinement(&[r], 2, 1), vec!["r0"]);
    }
}
