//! From a reasoning step to a formal theory: soft unification of implicit
//! assumptions, LLM formalization into LIF, and the LIF/Isabelle formats.

mod hol;
mod lif;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::gateway::{prompts, GatewayError, LlmHandle};
use crate::premise::split_sentences;
use crate::trace::{Problem, Step};

pub use hol::{emit_isabelle, hol_formula, TacticLadder};
pub use lif::{parse_formula, parse_lif, render_formula, render_lif, Formula, LogicTheory, SyntaxError, Term};

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "(none)"
    } else {
        s
    }
}

/// Sentences of a model reply, with list markers and fences removed.
pub(crate) fn reply_sentences(reply: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in reply.lines() {
        let line = line.trim().trim_start_matches(['-', '*', '•']).trim();
        if line.is_empty() || line.starts_with("```") || line.eq_ignore_ascii_case("(none)") {
            continue;
        }
        for s in split_sentences(line).sentences {
            let s = if s.ends_with(['.', '!', '?']) {
                s
            } else {
                format!("{s}.")
            };
            out.push(s);
        }
    }
    out
}

fn same_sentence(a: &str, b: &str) -> bool {
    let norm = |s: &str| s.trim().trim_end_matches('.').trim().to_lowercase();
    norm(a) == norm(b)
}

/// Joins assumption sentences into the single-line field format.
pub fn join_assumptions(sentences: &[String]) -> String {
    sentences.join(" ")
}

/// Extends the step's assumptions with LLM-proposed bridging sentences.
/// Sentences already present are not repeated; premise and conclusion are
/// returned untouched.
pub fn soft_unify(step: &Step, problem: &Problem, llm: &LlmHandle) -> Result<Step, GatewayError> {
    let premises = problem.premises.join(" ");
    let reply = llm.ask(
        prompts::SOFT_UNIFY,
        &[
            ("{{premises}}", &premises),
            ("{{step_premise}}", &step.premise_text),
            ("{{assumptions}}", or_none(&step.soft_unification)),
            ("{{conclusion}}", &step.conclusion),
        ],
    )?;
    let mut sentences = split_sentences(&step.soft_unification).sentences;
    let known = sentences.len();
    for s in reply_sentences(&reply) {
        if !sentences.iter().any(|t| same_sentence(t, &s)) {
            sentences.push(s);
        }
    }
    if sentences.len() == known {
        return Ok(step.clone());
    }
    Ok(Step {
        soft_unification: join_assumptions(&sentences),
        ..step.clone()
    })
}

/// Asks the LLM for the LIF theory of a step; the raw text is validated
/// later by [`parse_lif`].
pub fn formalize(step: &Step, llm: &LlmHandle) -> Result<String, GatewayError> {
    let reply = llm.ask(
        prompts::FORMALIZE,
        &[
            ("{{step_premise}}", &step.premise_text),
            ("{{assumptions}}", or_none(&step.soft_unification)),
            ("{{conclusion}}", &step.conclusion),
        ],
    )?;
    Ok(strip_fences(&reply))
}

/// Removes Markdown code fences and a leading `LIF:` label.
pub fn strip_fences(reply: &str) -> String {
    let mut lines: Vec<&str> = reply.lines().filter(|l| !l.trim_start().starts_with("```")).collect();
    while lines.first().is_some_and(|l| l.trim().is_empty() || l.trim() == "LIF:") {
        lines.remove(0);
    }
    let mut out = lines.join("\n").trim_end().to_string();
    out.push('\n');
    out
}

/// Where an axiom's vocabulary comes from in the step text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Index into the step's premise sentences followed by its assumption sentences.
    Sentence(usize),
    /// Covered only by several sentences together.
    Combined,
    /// Uses words that occur nowhere in the step's premise or assumptions.
    Ungrounded,
}

/// Crude stem so `reads_book` matches "read books".
fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    match w.strip_suffix('s') {
        Some(base) if base.len() >= 3 && !base.ends_with('s') => base.to_string(),
        _ => w,
    }
}

fn words(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(stem)
        .collect()
}

fn symbol_words(f: &Formula) -> BTreeSet<String> {
    let mut preds = BTreeSet::new();
    let mut consts = BTreeSet::new();
    f.predicates(&mut preds);
    f.constants(&mut consts);
    preds
        .into_iter()
        .map(|(p, _)| p)
        .chain(consts)
        .flat_map(|s| words(&s.replace('_', " ")))
        .collect()
}

/// Provenance of every axiom of `theory` in the text of `step`.
pub fn axiom_provenance(theory: &LogicTheory, step: &Step) -> Vec<Provenance> {
    let mut sentences = split_sentences(&step.premise_text).sentences;
    sentences.extend(split_sentences(&step.soft_unification).sentences);
    let per_sentence: Vec<BTreeSet<String>> = sentences.iter().map(|s| words(s)).collect();
    let all: BTreeSet<String> = per_sentence.iter().flatten().cloned().collect();
    theory
        .axioms
        .iter()
        .map(|a| {
            let need = symbol_words(a);
            if let Some(i) = per_sentence.iter().position(|ws| need.is_subset(ws)) {
                Provenance::Sentence(i)
            } else if need.is_subset(&all) {
                Provenance::Combined
            } else {
                Provenance::Ungrounded
            }
        })
        .collect()
}
