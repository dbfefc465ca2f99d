//! Isabelle/HOL theory documents generated from LIF theories.

use std::collections::BTreeSet;

use super::lif::{Formula, LogicTheory, Term};

/// Proof methods tried in order on the goal lemma.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TacticLadder {
    pub methods: Vec<String>,
}

impl Default for TacticLadder {
    fn default() -> Self {
        Self {
            methods: vec!["simp add:".into(), "blast intro:".into(), "metis".into()],
        }
    }
}

impl TacticLadder {
    /// Each method receives the axiom names as facts, combined with `|`.
    fn render(&self, facts: &str) -> String {
        let alts: Vec<String> = self
            .methods
            .iter()
            .map(|m| format!("{m} {facts}").replace(":  ", ": "))
            .collect();
        format!("({})", alts.join(" | "))
    }
}

const ENTITY: &str = "entity";

fn hol_atom(pred: &str, args: &[Term]) -> String {
    let mut s = pred.to_string();
    for a in args {
        s.push(' ');
        s.push_str(a.name());
    }
    s
}

/// HOL rendering with `\<forall>`, `\<exists>`, `\<longrightarrow>`, `\<and>`, `\<not>`.
pub fn hol_formula(f: &Formula) -> String {
    match f {
        Formula::ForAll(v, body) => format!("\\<forall>{v}. {}", hol_formula(body)),
        Formula::Exists(v, body) => format!("\\<exists>{v}. {}", hol_formula(body)),
        Formula::Implies(a, b) => format!("{} \\<longrightarrow> {}", hol_operand(a), hol_implies_rhs(b)),
        Formula::And(a, b) => format!("{} \\<and> {}", hol_conj_operand(a, true), hol_conj_operand(b, false)),
        Formula::Not(inner) => match inner.as_ref() {
            Formula::Atom { .. } | Formula::Not(_) => format!("\\<not> {}", hol_formula(inner)),
            other => format!("\\<not> ({})", hol_formula(other)),
        },
        Formula::Atom { pred, args } => hol_atom(pred, args),
    }
}

fn is_binder(f: &Formula) -> bool {
    matches!(f, Formula::ForAll(..) | Formula::Exists(..))
}

fn hol_operand(f: &Formula) -> String {
    if is_binder(f) || matches!(f, Formula::Implies(..)) {
        format!("({})", hol_formula(f))
    } else {
        hol_formula(f)
    }
}

fn hol_implies_rhs(f: &Formula) -> String {
    if is_binder(f) {
        format!("({})", hol_formula(f))
    } else {
        hol_formula(f)
    }
}

fn hol_conj_operand(f: &Formula, left: bool) -> String {
    // `\<and>` is right-associative in HOL
    let needs = is_binder(f) || matches!(f, Formula::Implies(..)) || (left && matches!(f, Formula::And(..)));
    if needs {
        format!("({})", hol_formula(f))
    } else {
        hol_formula(f)
    }
}

/// Emits a self-contained theory named `Step`. Identical theories produce
/// byte-identical documents.
pub fn emit_isabelle(theory: &LogicTheory, ladder: &TacticLadder) -> String {
    let mut preds = BTreeSet::new();
    let mut consts = BTreeSet::new();
    for f in theory.axioms.iter().chain(std::iter::once(&theory.goal)) {
        f.predicates(&mut preds);
        f.constants(&mut consts);
    }

    let mut out = String::from("theory Step imports Main begin\n\n");
    out.push_str(&format!("typedecl {ENTITY}\n\n"));
    if !consts.is_empty() || !preds.is_empty() {
        out.push_str("consts\n");
        for c in &consts {
            out.push_str(&format!("  {c} :: {ENTITY}\n"));
        }
        for (p, arity) in &preds {
            let mut ty: Vec<&str> = vec![ENTITY; *arity];
            ty.push("bool");
            out.push_str(&format!("  {p} :: \"{}\"\n", ty.join(" \\<Rightarrow> ")));
        }
        out.push('\n');
    }
    out.push_str("axiomatization where\n");
    let n = theory.axioms.len();
    for (i, a) in theory.axioms.iter().enumerate() {
        let sep = if i + 1 < n { " and" } else { "" };
        out.push_str(&format!("  A{}: \"{}\"{sep}\n", i + 1, hol_formula(a)));
    }
    let facts: Vec<String> = (1..=n).map(|i| format!("A{i}")).collect();
    out.push_str(&format!("\nlemma goal: \"{}\"\n", hol_formula(&theory.goal)));
    out.push_str(&format!("  by {}\n\nend\n", ladder.render(&facts.join(" "))));
    out
}
