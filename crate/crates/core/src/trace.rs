//! Problem and reasoning-trace data model.
//!
//! Rollouts are expected in the numbered three-line step format:
//!
//! ```text
//! Step 1:
//! Premise: Harry read a book. People who read books will be smart.
//! Soft Unification: Harry is a person. A person is people.
//! Conclusion: Harry will be smart.
//!
//! Final answer: [True]
//! ```
//!
//! `Assumption:` is accepted as an alias for `Soft Unification:`.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error("no `Final answer: [..]` line found")]
    MissingAnswer,
    #[error("step {step}: conclusion text not found in token stream")]
    AlignmentFailure { step: usize },
    #[error("invalid problem `{id}`: {reason}")]
    InvalidProblem { id: String, reason: String },
}

/// A scoring unit: premises, a question and an optional gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub premises: Vec<String>,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
}

impl Problem {
    pub fn validate(&self) -> Result<(), TraceError> {
        let invalid = |reason: &str| TraceError::InvalidProblem {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id"));
        }
        if self.premises.is_empty() {
            return Err(invalid("no premises"));
        }
        if self.premises.iter().any(|p| p.trim().is_empty()) {
            return Err(invalid("empty premise"));
        }
        if let Some(gold) = &self.gold_answer {
            if gold.is_empty() || gold.trim() != gold {
                return Err(invalid("gold answer must be a non-empty trimmed string"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub premise_text: String,
    #[serde(default)]
    pub soft_unification: String,
    pub conclusion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub text: String,
    pub prob: f64,
    /// Index of the step whose conclusion contains this token, 0 otherwise.
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTrace {
    pub problem_id: String,
    pub response_id: String,
    #[serde(default)]
    pub origin: String,
    pub steps: Vec<Step>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probs: Option<Vec<TokenSpan>>,
}

impl ResponseTrace {
    pub fn step(&self, index: usize) -> Option<&Step> {
        self.steps.iter().find(|s| s.index == index)
    }
}

/// All sampled responses for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSet {
    pub problem_id: String,
    pub traces: Vec<ResponseTrace>,
}

impl RolloutSet {
    pub fn validate(&self) -> Result<(), TraceError> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.traces {
            if t.problem_id != self.problem_id {
                return Err(TraceError::MalformedTrace(format!(
                    "trace {} belongs to {}, not {}",
                    t.response_id, t.problem_id, self.problem_id
                )));
            }
            if !seen.insert(t.response_id.as_str()) {
                return Err(TraceError::MalformedTrace(format!(
                    "duplicate response id {}",
                    t.response_id
                )));
            }
        }
        Ok(())
    }
}

static STEP_HEADER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^step\s+(\d+)\s*[:.]\s*(.*)$").unwrap());
static LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(premise|soft\s+unification|assumption|conclusion)\s*:\s*(.*)$").unwrap());
static FINAL_ANSWER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)final\s+answer\s*:\s*\[([^\]]*)\]").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Premise,
    SoftUnification,
    Conclusion,
}

/// Strips markdown emphasis and list markers that models like to add around labels.
fn clean_line(line: &str) -> &str {
    line.trim()
        .trim_start_matches(['#', '*', '-', '>'])
        .trim()
        .trim_end_matches('*')
        .trim()
}

fn parse_label(line: &str) -> Option<(Label, String)> {
    let caps = LABEL.captures(line)?;
    let name = caps[1].to_ascii_lowercase();
    let label = match name.as_str() {
        "premise" => Label::Premise,
        "conclusion" => Label::Conclusion,
        _ => Label::SoftUnification,
    };
    let value = caps[2].trim().trim_start_matches('*').trim().to_string();
    Some((label, value))
}

fn is_structural(line: &str) -> bool {
    let line = clean_line(line);
    STEP_HEADER.is_match(line) || LABEL.is_match(line) || FINAL_ANSWER.is_match(line)
}

#[derive(Default)]
struct PartialStep {
    index: usize,
    premise: Option<String>,
    soft: Option<String>,
    conclusion: Option<String>,
}

impl PartialStep {
    fn finish(self) -> Result<Step, TraceError> {
        let premise = self
            .premise
            .filter(|p| !p.trim().is_empty())
            .ok_or_else(|| TraceError::MalformedTrace(format!("step {} has no Premise", self.index)))?;
        let conclusion = self
            .conclusion
            .filter(|c| !c.trim().is_empty())
            .ok_or_else(|| TraceError::MalformedTrace(format!("step {} has no Conclusion", self.index)))?;
        Ok(Step {
            index: self.index,
            premise_text: premise.trim().to_string(),
            soft_unification: self.soft.unwrap_or_default().trim().to_string(),
            conclusion: conclusion.trim().to_string(),
        })
    }
}

/// Parses raw model output into a [`ResponseTrace`].
pub fn parse_trace(text: &str, problem_id: &str, response_id: &str) -> Result<ResponseTrace, TraceError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut steps = Vec::new();
    let mut current: Option<PartialStep> = None;

    let mut i = 0;
    while i < lines.len() {
        let line = clean_line(lines[i]);
        i += 1;
        if let Some(caps) = STEP_HEADER.captures(line) {
            if let Some(done) = current.take() {
                steps.push(done.finish()?);
            }
            let index: usize = caps[1]
                .parse()
                .map_err(|_| TraceError::MalformedTrace(format!("bad step number `{}`", &caps[1])))?;
            let expected = steps.len() + 1;
            if index != expected {
                return Err(TraceError::MalformedTrace(format!(
                    "expected Step {expected}, found Step {index}"
                )));
            }
            current = Some(PartialStep {
                index,
                ..Default::default()
            });
            // `Step 1: Premise: ...` on a single line
            let rest = clean_line(caps.get(2).map_or("", |m| m.as_str()));
            if let Some((label, value)) = parse_label(rest) {
                set_field(current.as_mut().unwrap(), label, value, &lines, &mut i);
            }
            continue;
        }
        if FINAL_ANSWER.is_match(line) {
            if let Some(done) = current.take() {
                steps.push(done.finish()?);
            }
            continue;
        }
        let Some(step) = current.as_mut() else {
            continue;
        };
        if let Some((label, value)) = parse_label(line) {
            set_field(step, label, value, &lines, &mut i);
        }
    }
    if let Some(done) = current.take() {
        steps.push(done.finish()?);
    }
    if steps.is_empty() {
        return Err(TraceError::MalformedTrace("no step blocks found".into()));
    }
    let answer = extract_answer(text).map_err(|_| TraceError::MalformedTrace("no final-answer line".into()))?;
    if answer.is_empty() {
        return Err(TraceError::MalformedTrace("empty final answer".into()));
    }
    Ok(ResponseTrace {
        problem_id: problem_id.to_string(),
        response_id: response_id.to_string(),
        origin: String::new(),
        steps,
        answer,
        token_probs: None,
    })
}

fn set_field(step: &mut PartialStep, label: Label, mut value: String, lines: &[&str], i: &mut usize) {
    // A label with nothing after the colon takes its value from the next plain line.
    if value.is_empty() && label != Label::SoftUnification {
        if let Some(next) = lines.get(*i) {
            if !next.trim().is_empty() && !is_structural(next) {
                value = clean_line(next).to_string();
                *i += 1;
            }
        }
    }
    let slot = match label {
        Label::Premise => &mut step.premise,
        Label::SoftUnification => &mut step.soft,
        Label::Conclusion => &mut step.conclusion,
    };
    *slot = Some(value);
}

/// Returns the bracket content of the last `Final answer: [X]` line, trimmed.
pub fn extract_answer(text: &str) -> Result<String, TraceError> {
    text.lines()
        .rev()
        .find_map(|line| FINAL_ANSWER.captures(line))
        .map(|caps| caps[1].trim().to_string())
        .ok_or(TraceError::MissingAnswer)
}

/// Renders a trace in the canonical step format.
pub fn render_trace(trace: &ResponseTrace) -> String {
    let mut out = String::new();
    for step in &trace.steps {
        out.push_str(&format!("Step {}:\n", step.index));
        out.push_str(&format!("Premise: {}\n", step.premise_text));
        if step.soft_unification.is_empty() {
            out.push_str("Soft Unification:\n");
        } else {
            out.push_str(&format!("Soft Unification: {}\n", step.soft_unification));
        }
        out.push_str(&format!("Conclusion: {}\n\n", step.conclusion));
    }
    out.push_str(&format!("Final answer: [{}]\n", trace.answer));
    out
}

/// Aligns generator tokens to each step's conclusion.
///
/// Tokens are concatenated into one stream and each conclusion is located by
/// a forward substring search starting after the previous step's match. Every
/// token overlapping a match is tagged with that step's index.
pub fn attach_token_probs(
    mut trace: ResponseTrace,
    tokens: Option<&[(String, f64)]>,
) -> Result<ResponseTrace, TraceError> {
    let Some(tokens) = tokens else {
        trace.token_probs = None;
        return Ok(trace);
    };
    let mut stream = String::new();
    let mut bounds = Vec::with_capacity(tokens.len());
    for (t, _) in tokens {
        let start = stream.len();
        stream.push_str(t);
        bounds.push((start, stream.len()));
    }
    let mut spans: Vec<TokenSpan> = tokens
        .iter()
        .map(|(t, p)| TokenSpan {
            text: t.clone(),
            prob: p.clamp(0.0, 1.0),
            step_index: 0,
        })
        .collect();

    let mut cursor = 0;
    for step in &trace.steps {
        let needle = step.conclusion.as_str();
        let found = stream[cursor..].find(needle).map(|off| cursor + off);
        let start = found.ok_or(TraceError::AlignmentFailure { step: step.index })?;
        let end = start + needle.len();
        for (span, &(s, e)) in spans.iter_mut().zip(&bounds) {
            if s < end && e > start && e > s {
                span.step_index = step.index;
            }
        }
        cursor = end;
    }
    trace.token_probs = Some(spans);
    Ok(trace)
}

/// One line of `rollouts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub problem_id: String,
    pub response_id: String,
    #[serde(default)]
    pub origin: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<TokenRecord>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub refined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub t: String,
    pub p: f64,
}

impl RolloutRecord {
    pub fn token_pairs(&self) -> Option<Vec<(String, f64)>> {
        self.tokens
            .as_ref()
            .map(|ts| ts.iter().map(|t| (t.t.clone(), t.p)).collect())
    }

    /// Parses the text and aligns token probabilities when present.
    pub fn to_trace(&self) -> Result<ResponseTrace, TraceError> {
        let mut trace = parse_trace(&self.text, &self.problem_id, &self.response_id)?;
        trace.origin = self.origin.clone();
        attach_token_probs(trace, self.token_pairs().as_deref())
    }
}
