//! Prover backends producing the two-flag verdict (syntax, logic) for a step.

mod clausify;
mod isabelle;
mod resolution;

use std::collections::BTreeSet;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formal::{emit_isabelle, parse_lif, Formula, LogicTheory, TacticLadder};
use clausify::{Clausifier, Symbols};
use resolution::{refute, SearchLimits, SearchOutcome};

pub use isabelle::{classify_isabelle_output, IsabelleConfig, IsabelleRunner};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProverError {
    #[error("prover backend unavailable: {0}")]
    BackendUnavailable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Internal,
    Isabelle,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "internal" => Ok(Self::Internal),
            "isabelle" => Ok(Self::Isabelle),
            other => Err(format!("unknown prover backend `{other}`")),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Internal => "internal",
            Self::Isabelle => "isabelle",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProverVerdict {
    pub syntax_ok: bool,
    pub logic_ok: bool,
    pub diagnostics: Vec<String>,
    pub backend: BackendKind,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl ProverVerdict {
    pub fn valid(backend: BackendKind) -> Self {
        Self {
            syntax_ok: true,
            logic_ok: true,
            diagnostics: Vec::new(),
            backend,
            elapsed: Duration::ZERO,
        }
    }

    pub fn invalid(backend: BackendKind, diagnostics: Vec<String>) -> Self {
        Self {
            syntax_ok: true,
            logic_ok: false,
            diagnostics: nonempty(diagnostics, "inference not proved"),
            backend,
            elapsed: Duration::ZERO,
        }
    }

    pub fn syntax_error(backend: BackendKind, diagnostics: Vec<String>) -> Self {
        Self {
            syntax_ok: false,
            logic_ok: false,
            diagnostics: nonempty(diagnostics, "syntax error"),
            backend,
            elapsed: Duration::ZERO,
        }
    }

    /// Verdict class used in run manifests.
    pub fn class(&self) -> &'static str {
        match (self.syntax_ok, self.logic_ok) {
            (true, true) => "valid",
            (true, false) => "invalid",
            _ => "syntax_error",
        }
    }
}

fn nonempty(mut d: Vec<String>, fallback: &str) -> Vec<String> {
    if d.is_empty() {
        d.push(fallback.to_string());
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProofBudget {
    pub max_depth: u32,
    pub timeout: Duration,
}

impl ProofBudget {
    pub fn internal_default() -> Self {
        Self {
            max_depth: 12,
            timeout: Duration::from_secs(10),
        }
    }

    pub fn isabelle_default() -> Self {
        Self {
            max_depth: 12,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_depth == 0 || self.timeout.is_zero() {
            return Err("proof budget must be strictly positive".into());
        }
        Ok(())
    }
}

impl Default for ProofBudget {
    fn default() -> Self {
        Self::internal_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProofOutcome {
    Valid,
    Invalid {
        diagnostics: Vec<String>,
    },
    DepthExhausted {
        diagnostics: Vec<String>,
    },
    /// Clausification left something outside the clause language.
    Unsupported(String),
}

const MAX_CLAUSES: usize = 20_000;

/// Refutation proof of `goal` from `axioms` with the built-in resolution prover.
pub fn internal_prove(theory: &LogicTheory, budget: &ProofBudget) -> ProofOutcome {
    let mut syms = Symbols::default();
    let mut input = Vec::new();
    {
        let mut cl = Clausifier::new(&mut syms);
        for a in &theory.axioms {
            match cl.clauses(a, false) {
                Ok(cs) => input.extend(cs),
                Err(e) => return ProofOutcome::Unsupported(e.0),
            }
        }
        match cl.clauses(&theory.goal, true) {
            Ok(cs) => input.extend(cs),
            Err(e) => return ProofOutcome::Unsupported(e.0),
        }
    }
    let limits = SearchLimits {
        max_depth: budget.max_depth,
        deadline: Instant::now() + budget.timeout,
        max_clauses: MAX_CLAUSES,
    };
    let search = refute(input, &limits);
    match search.outcome {
        SearchOutcome::Refuted => ProofOutcome::Valid,
        SearchOutcome::Saturated => {
            let mut d = vec![format!(
                "goal `{}` is not entailed by the axioms (saturated after {} clauses)",
                theory.goal, search.generated
            )];
            d.extend(vocabulary_gaps(theory));
            d.extend(derived_facts(&search.kept, &syms));
            ProofOutcome::Invalid { diagnostics: d }
        }
        other => {
            let why = match other {
                SearchOutcome::Timeout => format!("timeout after {:?}", budget.timeout),
                SearchOutcome::ClauseLimit => format!("clause limit of {MAX_CLAUSES} reached"),
                _ => format!("depth budget exhausted (max_depth={})", budget.max_depth),
            };
            let mut d = vec![format!("goal `{}` not proved: {why}", theory.goal)];
            d.extend(vocabulary_gaps(theory));
            ProofOutcome::DepthExhausted { diagnostics: d }
        }
    }
}

/// Goal symbols that no axiom mentions: the usual sign of a missing bridge
/// between two wordings of the same concept.
fn vocabulary_gaps(theory: &LogicTheory) -> Vec<String> {
    let mut axiom_preds = BTreeSet::new();
    let mut axiom_consts = BTreeSet::new();
    for a in &theory.axioms {
        a.predicates(&mut axiom_preds);
        a.constants(&mut axiom_consts);
    }
    let mut goal_preds = BTreeSet::new();
    let mut goal_consts = BTreeSet::new();
    theory.goal.predicates(&mut goal_preds);
    theory.goal.constants(&mut goal_consts);
    let mut out = Vec::new();
    for (p, n) in goal_preds.difference(&axiom_preds) {
        out.push(format!("predicate `{p}/{n}` in the goal does not occur in any axiom"));
    }
    for c in goal_consts.difference(&axiom_consts) {
        out.push(format!("constant `{c}` in the goal does not occur in any axiom"));
    }
    out
}

fn derived_facts(kept: &[resolution::Clause], syms: &Symbols) -> Option<String> {
    let mut facts: Vec<String> = kept
        .iter()
        .filter(|c| c.lits.len() == 1 && c.is_ground())
        .map(|c| syms.lit(&c.lits[0]).to_string())
        .filter(|s| !s.contains('#'))
        .collect();
    facts.sort();
    facts.dedup();
    if facts.is_empty() {
        return None;
    }
    facts.truncate(12);
    Some(format!("derived facts: {}", facts.join(", ")))
}

/// What to check: raw LIF text or an already parsed theory.
#[derive(Debug, Clone, Copy)]
pub enum ProverInput<'a> {
    Text(&'a str),
    Theory(&'a LogicTheory),
}

/// A configured prover backend.
#[derive(Debug)]
pub struct Prover {
    pub kind: BackendKind,
    pub budget: ProofBudget,
    pub ladder: TacticLadder,
    isabelle: Option<IsabelleRunner>,
}

impl Prover {
    pub fn internal(budget: ProofBudget) -> Self {
        Self {
            kind: BackendKind::Internal,
            budget,
            ladder: TacticLadder::default(),
            isabelle: None,
        }
    }

    pub fn isabelle(config: IsabelleConfig, budget: ProofBudget) -> Self {
        Self {
            kind: BackendKind::Isabelle,
            budget,
            ladder: config.ladder.clone(),
            isabelle: Some(IsabelleRunner::new(config)),
        }
    }

    /// Fails with `BackendUnavailable` when the external prover cannot run.
    pub fn preflight(&self) -> Result<(), ProverError> {
        match &self.isabelle {
            Some(r) => r.resolve_executable().map(|_| ()),
            None => Ok(()),
        }
    }

    pub fn check(&self, input: ProverInput<'_>) -> Result<ProverVerdict, ProverError> {
        let started = Instant::now();
        let theory = match input {
            ProverInput::Theory(t) => t.clone(),
            ProverInput::Text(text) => match parse_lif(text) {
                Ok(t) => t,
                Err(e) => {
                    let mut v = ProverVerdict::syntax_error(self.kind, vec![e.to_string()]);
                    v.elapsed = started.elapsed();
                    return Ok(v);
                }
            },
        };
        let mut verdict = match &self.isabelle {
            None => verdict_from_outcome(internal_prove(&theory, &self.budget)),
            Some(runner) => {
                let doc = emit_isabelle(&theory, &self.ladder);
                runner.check(&doc, self.budget.timeout)?
            }
        };
        verdict.elapsed = started.elapsed();
        Ok(verdict)
    }
}

pub fn verdict_from_outcome(outcome: ProofOutcome) -> ProverVerdict {
    let b = BackendKind::Internal;
    match outcome {
        ProofOutcome::Valid => ProverVerdict::valid(b),
        ProofOutcome::Invalid { diagnostics } => ProverVerdict::invalid(b, diagnostics),
        ProofOutcome::DepthExhausted { mut diagnostics } => {
            diagnostics.insert(0, "DepthExhausted".into());
            ProverVerdict::invalid(b, diagnostics)
        }
        ProofOutcome::Unsupported(msg) => ProverVerdict::syntax_error(b, vec![format!("UnsupportedFormula: {msg}")]),
    }
}

/// Convenience for tests and tools: prove `axioms ⊢ goal` from formulas.
pub fn entails(axioms: &[Formula], goal: &Formula, budget: &ProofBudget) -> ProofOutcome {
    internal_prove(&LogicTheory::new(axioms.to_vec(), goal.clone()), budget)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prove(src: &str) -> ProofOutcome {
        internal_prove(&parse_lif(src).unwrap(), &ProofBudget::default())
    }

    #[test]
    fn modus_ponens_is_valid() {
        assert_eq!(
            prove("axiom: forall X. (reads_book(X) -> smart(X))\naxiom: reads_book(harry)\ngoal: smart(harry)"),
            ProofOutcome::Valid
        );
    }

    #[test]
    fn affirming_the_consequent_is_invalid() {
        let out = prove("axiom: forall X. (reads_book(X) -> smart(X))\naxiom: smart(harry)\ngoal: reads_book(harry)");
        let ProofOutcome::Invalid { diagnostics } = out else {
            panic!("expected Invalid, got {out:?}");
        };
        assert!(diagnostics[0].contains("reads_book(harry)"));
        assert!(diagnostics.iter().any(|d| d.contains("derived facts: smart(harry)")));
    }

    #[test]
    fn bridging_axiom_makes_it_valid() {
        let without = "axiom: dad(tom)\naxiom: forall X. (father(X) -> caring(X))\ngoal: caring(tom)";
        assert!(matches!(prove(without), ProofOutcome::Invalid { .. }));
        let with = "axiom: dad(tom)\naxiom: forall X. (father(X) -> caring(X))\naxiom: forall X. (dad(X) -> father(X))\ngoal: caring(tom)";
        assert_eq!(prove(with), ProofOutcome::Valid);
    }

    #[test]
    fn vocabulary_gap_diagnostic() {
        let out = prove("axiom: dad(tom)\ngoal: father(tom)");
        let ProofOutcome::Invalid { diagnostics } = out else {
            panic!()
        };
        assert!(diagnostics.iter().any(|d| d.contains("predicate `father/1`")));
    }

    #[test]
    fn quantified_goals_and_existentials() {
        assert_eq!(
            prove("axiom: forall X. p(X)\ngoal: forall Y. p(Y)"),
            ProofOutcome::Valid
        );
        assert_eq!(prove("axiom: p(a)\ngoal: exists X. p(X)"), ProofOutcome::Valid);
        assert_eq!(
            prove("axiom: exists X. (p(X) & q(X))\naxiom: forall X. (q(X) -> r(X))\ngoal: exists Y. r(Y)"),
            ProofOutcome::Valid
        );
        assert!(matches!(
            prove("axiom: exists X. p(X)\ngoal: p(a)"),
            ProofOutcome::Invalid { .. }
        ));
    }

    #[test]
    fn negation_and_contradiction() {
        assert_eq!(prove("axiom: p(a)\naxiom: ~p(a)\ngoal: q(b)"), ProofOutcome::Valid);
        assert_eq!(
            prove("axiom: forall X. (bird(X) -> flies(X))\naxiom: ~flies(tweety)\ngoal: ~bird(tweety)"),
            ProofOutcome::Valid
        );
    }

    #[test]
    fn unsupported_existential() {
        assert!(matches!(
            prove("axiom: forall X. exists Y. parent(Y, X)\ngoal: parent(a, b)"),
            ProofOutcome::Unsupported(_)
        ));
    }

    #[test]
    fn check_text_branches() {
        let p = Prover::internal(ProofBudget::default());
        let v = p.check(ProverInput::Text("goal: p(a")).unwrap();
        assert!(!v.syntax_ok && !v.logic_ok && !v.diagnostics.is_empty());
        let v = p
            .check(ProverInput::Text(
                "axiom: forall X. (p(X) -> q(X))\naxiom: p(a)\ngoal: q(a)",
            ))
            .unwrap();
        assert!(v.syntax_ok && v.logic_ok);
        let v = p.check(ProverInput::Text("axiom: q(a)\ngoal: p(a)")).unwrap();
        assert!(v.syntax_ok && !v.logic_ok && !v.diagnostics.is_empty());
        let v = p
            .check(ProverInput::Text("axiom: forall X. exists Y. r(X, Y)\ngoal: r(a, b)"))
            .unwrap();
        assert!(!v.syntax_ok && v.diagnostics[0].starts_with("UnsupportedFormula"));
    }

    #[test]
    fn depth_exhausted_maps_to_invalid() {
        let mut src = String::from("axiom: p0(a)\n");
        for i in 0..30 {
            src.push_str(&format!("axiom: forall X. (p{i}(X) -> p{}(X))\n", i + 1));
        }
        src.push_str("goal: p30(a)\n");
        let budget = ProofBudget {
            max_depth: 2,
            timeout: Duration::from_secs(10),
        };
        let out = internal_prove(&parse_lif(&src).unwrap(), &budget);
        assert!(matches!(out, ProofOutcome::DepthExhausted { .. }), "{out:?}");
        let v = verdict_from_outcome(out);
        assert!(v.syntax_ok && !v.logic_ok);
        assert_eq!(v.diagnostics[0], "DepthExhausted");
    }

    #[test]
    fn isabelle_missing_is_unavailable() {
        let cfg = IsabelleConfig {
            executable: "/nonexistent/isabelle".into(),
            ..Default::default()
        };
        let p = Prover::isabelle(cfg, ProofBudget::isabelle_default());
        assert!(matches!(p.preflight(), Err(ProverError::BackendUnavailable(_))));
        let r = p.check(ProverInput::Text("axiom: p(a)\ngoal: p(a)"));
        assert!(matches!(r, Err(ProverError::BackendUnavailable(_))));
        // syntax errors are still reported without the backend
        let v = p.check(ProverInput::Text("goal: p(a")).unwrap();
        assert!(!v.syntax_ok);
    }
}
