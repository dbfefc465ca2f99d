//! The logic interchange format (LIF): a line-oriented first-order language.
//!
//! ```text
//! theory     = {axiom_line} goal_line
//! axiom_line = "axiom:" formula
//! goal_line  = "goal:" formula
//! formula    = quantified | implication
//! quantified = ("forall" | "exists") var "." formula
//! implication= conjunct ["->" formula]
//! conjunct   = unary {"&" unary}
//! unary      = ["~"] (atom | "(" formula ")")
//! atom       = pred "(" term {"," term} ")"
//! ```
//!
//! Variables start with an uppercase letter, constants and predicates with a
//! lowercase one. Blank lines are ignored.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at {line}:{column}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Const(String),
    Var(String),
}

impl Term {
    pub fn name(&self) -> &str {
        match self {
            Term::Const(n) | Term::Var(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formula {
    Atom { pred: String, args: Vec<Term> },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    ForAll(String, Box<Formula>),
    Exists(String, Box<Formula>),
}

impl Formula {
    pub fn atom(pred: &str, args: &[&str]) -> Self {
        let args = args
            .iter()
            .map(|a| {
                if a.starts_with(|c: char| c.is_ascii_uppercase()) {
                    Term::Var(a.to_string())
                } else {
                    Term::Const(a.to_string())
                }
            })
            .collect();
        Formula::Atom {
            pred: pred.to_string(),
            args,
        }
    }

    #[allow(clippy::should_implement_trait)] // a constructor, not an operator
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn forall(var: &str, body: Formula) -> Self {
        Formula::ForAll(var.to_string(), Box::new(body))
    }

    pub fn exists(var: &str, body: Formula) -> Self {
        Formula::Exists(var.to_string(), Box::new(body))
    }

    /// Variables occurring free.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match self {
            Formula::Atom { args, .. } => {
                for a in args {
                    if let Term::Var(v) = a {
                        if !bound.contains(v) {
                            out.insert(v.clone());
                        }
                    }
                }
            }
            Formula::Not(f) => f.collect_free(bound, out),
            Formula::And(a, b) | Formula::Implies(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Formula::ForAll(v, f) | Formula::Exists(v, f) => {
                bound.push(v.clone());
                f.collect_free(bound, out);
                bound.pop();
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }

    /// Predicate symbols with their arities.
    pub fn predicates(&self, out: &mut BTreeSet<(String, usize)>) {
        match self {
            Formula::Atom { pred, args } => {
                out.insert((pred.clone(), args.len()));
            }
            Formula::Not(f) | Formula::ForAll(_, f) | Formula::Exists(_, f) => f.predicates(out),
            Formula::And(a, b) | Formula::Implies(a, b) => {
                a.predicates(out);
                b.predicates(out);
            }
        }
    }

    pub fn constants(&self, out: &mut BTreeSet<String>) {
        match self {
            Formula::Atom { args, .. } => {
                for a in args {
                    if let Term::Const(c) = a {
                        out.insert(c.clone());
                    }
                }
            }
            Formula::Not(f) | Formula::ForAll(_, f) | Formula::Exists(_, f) => f.constants(out),
            Formula::And(a, b) | Formula::Implies(a, b) => {
                a.constants(out);
                b.constants(out);
            }
        }
    }
}

/// Axioms (cited premises plus assumptions) and the goal a step infers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicTheory {
    pub axioms: Vec<Formula>,
    pub goal: Formula,
    pub source_step: usize,
}

impl LogicTheory {
    pub fn new(axioms: Vec<Formula>, goal: Formula) -> Self {
        Self {
            axioms,
            goal,
            source_step: 0,
        }
    }

    pub fn with_source_step(mut self, step: usize) -> Self {
        self.source_step = step;
        self
    }

    pub fn is_valid(&self) -> bool {
        !self.axioms.is_empty() && self.goal.is_closed() && self.axioms.iter().all(Formula::is_closed)
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Arrow,
    Amp,
    Tilde,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Amp => f.write_str("`&`"),
            Tok::Tilde => f.write_str("`~`"),
            Tok::End => f.write_str("end of line"),
        }
    }
}

fn lex(src: &str, line: usize, col_offset: usize) -> Result<Vec<(Tok, usize)>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = col_offset + i;
        match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '(' => out.push((Tok::LParen, col)),
            ')' => out.push((Tok::RParen, col)),
            ',' => out.push((Tok::Comma, col)),
            '.' => out.push((Tok::Dot, col)),
            '&' => out.push((Tok::Amp, col)),
            '~' => out.push((Tok::Tilde, col)),
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push((Tok::Arrow, col));
                i += 2;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), col));
                continue;
            }
            other => {
                return Err(SyntaxError {
                    line,
                    column: col,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
        i += 1;
    }
    out.push((Tok::End, col_offset + chars.len()));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
    bound: Vec<String>,
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "forall" | "exists")
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn col(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, SyntaxError> {
        Err(SyntaxError {
            line: self.line,
            column: self.col(),
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok) -> Result<(), SyntaxError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            let found = self.peek().clone();
            self.error(format!("expected {want}, found {found}"))
        }
    }

    fn formula(&mut self) -> Result<Formula, SyntaxError> {
        if let Tok::Ident(kw) = self.peek() {
            if is_keyword(kw) {
                let universal = kw == "forall";
                self.bump();
                let var = match self.peek().clone() {
                    Tok::Ident(v) if v.starts_with(|c: char| c.is_ascii_uppercase()) => {
                        self.bump();
                        v
                    }
                    other => return self.error(format!("expected a variable (uppercase identifier), found {other}")),
                };
                self.expect(Tok::Dot)?;
                self.bound.push(var.clone());
                let body = self.formula();
                self.bound.pop();
                let body = Box::new(body?);
                return Ok(if universal {
                    Formula::ForAll(var, body)
                } else {
                    Formula::Exists(var, body)
                });
            }
        }
        self.implication()
    }

    fn implication(&mut self) -> Result<Formula, SyntaxError> {
        let lhs = self.conjunct()?;
        if *self.peek() == Tok::Arrow {
            self.bump();
            let rhs = self.formula()?;
            return Ok(Formula::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn conjunct(&mut self) -> Result<Formula, SyntaxError> {
        let mut acc = self.unary()?;
        while *self.peek() == Tok::Amp {
            self.bump();
            let rhs = self.unary()?;
            acc = Formula::And(Box::new(acc), Box::new(rhs));
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Formula, SyntaxError> {
        let negated = if *self.peek() == Tok::Tilde {
            self.bump();
            true
        } else {
            false
        };
        let inner = match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let f = self.formula()?;
                self.expect(Tok::RParen)?;
                f
            }
            Tok::Ident(name) if is_keyword(&name) => {
                return self.error("quantified formula must be parenthesized here");
            }
            Tok::Ident(_) => self.atom()?,
            other => return self.error(format!("expected a formula, found {other}")),
        };
        Ok(if negated { Formula::Not(Box::new(inner)) } else { inner })
    }

    fn atom(&mut self) -> Result<Formula, SyntaxError> {
        let Tok::Ident(pred) = self.bump() else {
            unreachable!("atom called on non-identifier")
        };
        if !pred.starts_with(|c: char| c.is_ascii_lowercase()) {
            self.pos -= 1;
            return self.error(format!("predicate `{pred}` must start with a lowercase letter"));
        }
        if *self.peek() != Tok::LParen {
            let found = self.peek().clone();
            return self.error(format!("expected `(` after predicate `{pred}`, found {found}"));
        }
        self.bump();
        let mut args = vec![self.term()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            args.push(self.term()?);
        }
        self.expect(Tok::RParen)?;
        Ok(Formula::Atom { pred, args })
    }

    fn term(&mut self) -> Result<Term, SyntaxError> {
        match self.peek().clone() {
            Tok::Ident(name) if is_keyword(&name) => self.error(format!("`{name}` is reserved")),
            Tok::Ident(name) if name.starts_with(|c: char| c.is_ascii_uppercase()) => {
                if !self.bound.contains(&name) {
                    return self.error(format!("unbound variable `{name}`"));
                }
                self.bump();
                Ok(Term::Var(name))
            }
            Tok::Ident(name) => {
                if !name.starts_with(|c: char| c.is_ascii_lowercase()) {
                    return self.error(format!("constant `{name}` must start with a lowercase letter"));
                }
                self.bump();
                Ok(Term::Const(name))
            }
            other => self.error(format!("expected a term, found {other}")),
        }
    }
}

/// Parses a single LIF formula (no `axiom:`/`goal:` prefix).
pub fn parse_formula(src: &str) -> Result<Formula, SyntaxError> {
    parse_formula_at(src, 1, 1)
}

fn parse_formula_at(src: &str, line: usize, col: usize) -> Result<Formula, SyntaxError> {
    let toks = lex(src, line, col)?;
    let mut p = Parser {
        toks,
        pos: 0,
        line,
        bound: Vec::new(),
    };
    let f = p.formula()?;
    if *p.peek() != Tok::End {
        let found = p.peek().clone();
        return p.error(format!("unexpected {found} after formula"));
    }
    Ok(f)
}

/// Parses LIF text into a theory or a positioned syntax error.
pub fn parse_lif(text: &str) -> Result<LogicTheory, SyntaxError> {
    let mut axioms = Vec::new();
    let mut goal: Option<Formula> = None;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let indent = raw.chars().take_while(|c| c.is_whitespace()).count();
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |column: usize, message: String| SyntaxError {
            line: line_no,
            column,
            message,
        };
        if goal.is_some() {
            return Err(err(indent + 1, "content after goal line".into()));
        }
        let (kind, rest) = if let Some(rest) = line.strip_prefix("axiom:") {
            ("axiom", rest)
        } else if let Some(rest) = line.strip_prefix("goal:") {
            ("goal", rest)
        } else {
            return Err(err(indent + 1, "expected `axiom:` or `goal:`".into()));
        };
        let col = indent + kind.len() + 2;
        let f = parse_formula_at(rest, line_no, col)?;
        if kind == "axiom" {
            axioms.push(f);
        } else {
            goal = Some(f);
        }
    }
    let last_line = text.lines().count().max(1);
    let goal = goal.ok_or_else(|| SyntaxError {
        line: last_line,
        column: 1,
        message: "missing goal line".into(),
    })?;
    if axioms.is_empty() {
        return Err(SyntaxError {
            line: 1,
            column: 1,
            message: "theory has no axioms".into(),
        });
    }
    Ok(LogicTheory::new(axioms, goal))
}

// ---------------------------------------------------------------------------
// Rendering

fn render_atom(pred: &str, args: &[Term]) -> String {
    let args: Vec<&str> = args.iter().map(Term::name).collect();
    format!("{pred}({})", args.join(", "))
}

/// Renders a formula so that [`parse_formula`] yields the same tree.
pub fn render_formula(f: &Formula) -> String {
    match f {
        Formula::ForAll(v, body) => format!("forall {v}. {}", render_formula(body)),
        Formula::Exists(v, body) => format!("exists {v}. {}", render_formula(body)),
        Formula::Implies(a, b) => format!("{} -> {}", render_conjunct(a), render_formula(b)),
        _ => render_conjunct(f),
    }
}

fn render_conjunct(f: &Formula) -> String {
    match f {
        Formula::And(a, b) => format!("{} & {}", render_conjunct(a), render_unary(b)),
        _ => render_unary(f),
    }
}

fn render_unary(f: &Formula) -> String {
    match f {
        Formula::Atom { pred, args } => render_atom(pred, args),
        Formula::Not(inner) => match inner.as_ref() {
            Formula::Atom { pred, args } => format!("~{}", render_atom(pred, args)),
            other => format!("~({})", render_formula(other)),
        },
        other => format!("({})", render_formula(other)),
    }
}

pub fn render_lif(theory: &LogicTheory) -> String {
    let mut out = String::new();
    for a in &theory.axioms {
        out.push_str("axiom: ");
        out.push_str(&render_formula(a));
        out.push('\n');
    }
    out.push_str("goal: ");
    out.push_str(&render_formula(&theory.goal));
    out.push('\n');
    out
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_formula(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_theory() {
        let t = parse_lif("axiom: p(a)\ngoal: p(a)").unwrap();
        assert_eq!(t.axioms, vec![Formula::atom("p", &["a"])]);
        assert_eq!(t.goal, Formula::atom("p", &["a"]));
    }

    #[test]
    fn modus_ponens_theory() {
        let t = parse_lif("axiom: forall X. (p(X) -> q(X))\naxiom: p(a)\ngoal: q(a)").unwrap();
        assert_eq!(t.axioms.len(), 2);
        assert_eq!(
            t.axioms[0],
            Formula::forall(
                "X",
                Formula::implies(Formula::atom("p", &["X"]), Formula::atom("q", &["X"]))
            )
        );
        assert_eq!(t.goal, Formula::atom("q", &["a"]));
    }

    #[test]
    fn unclosed_paren_is_positioned() {
        let err = parse_lif("goal: p(a").unwrap_err();
        assert_eq!(err.line, 1);
        assert_eq!(err.column, 10);
        assert!(err.message.contains("`)`"), "{}", err.message);
    }

    #[test]
    fn precedence_and_associativity() {
        let f = parse_formula("a(x) & b(x) & c(x) -> d(x) -> e(x)").unwrap();
        let abc = Formula::and(
            Formula::and(Formula::atom("a", &["x"]), Formula::atom("b", &["x"])),
            Formula::atom("c", &["x"]),
        );
        let want = Formula::implies(
            abc,
            Formula::implies(Formula::atom("d", &["x"]), Formula::atom("e", &["x"])),
        );
        assert_eq!(f, want);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "goal: p(X)",      // unbound
            "goal: P(a)",      // uppercase predicate
            "goal: p()",       // no args
            "goal: p(a) q(a)", // trailing
            "goal: ~~p(a)",    // double negation without parens
            "goal: p(a) & forall X. q(X)",
            "axiom: p(a)\ngoal: p(a)\naxiom: q(a)",
            "axiom: p(a)",
            "goal: p(a)",
            "hypothesis: p(a)\ngoal: p(a)",
            "axiom: p(a) | q(a)\ngoal: p(a)",
            "axiom: forall x. p(x)\ngoal: p(a)",
        ] {
            assert!(parse_lif(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn blank_lines_and_indent() {
        let t = parse_lif("\n  axiom: p(a)\n\n goal: ~(p(a) -> q(a))\n").unwrap();
        assert_eq!(t.axioms.len(), 1);
        let err = parse_lif("  axiom: p(a\ngoal: p(a)").unwrap_err();
        assert_eq!((err.line, err.column), (1, 13));
    }

    #[test]
    fn render_round_trip_examples() {
        for src in [
            "axiom: forall X. (p(X) -> q(X))\naxiom: p(a)\ngoal: q(a)",
            "axiom: ~(p(a) & q(b)) -> r(a, b)\naxiom: exists Y. (r(a, Y) & ~s(Y))\ngoal: forall X. (p(X) -> (q(X) -> r(X, X)))",
            "axiom: p(a) & (q(a) & r(a))\ngoal: ~(~p(a))",
        ] {
            let t = parse_lif(src).unwrap();
            let again = parse_lif(&render_lif(&t)).unwrap();
            assert_eq!(t, again);
        }
    }

    fn arb_formula() -> impl Strategy<Value = Formula> {
        let leaf = (
            prop::sample::select(vec!["p", "q", "reads_book"]),
            prop::collection::vec(prop::sample::select(vec!["a", "harry", "X", "Y"]), 1..3),
        )
            .prop_map(|(p, args)| Formula::atom(p, &args));
        let tree = leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(Formula::not),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::implies(a, b)),
                inner.clone().prop_map(|b| Formula::forall("X", b)),
                inner.prop_map(|b| Formula::exists("Y", b)),
            ]
        });
        // close over the two variable names
        tree.prop_map(|f| Formula::forall("X", Formula::exists("Y", f)))
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(axioms in prop::collection::vec(arb_formula(), 1..4), goal in arb_formula()) {
            let t = LogicTheory::new(axioms, goal);
            let back = parse_lif(&render_lif(&t)).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn parser_is_total(s in "\\PC{0,60}") {
            let _ = parse_lif(&s);
            let _ = parse_lif(&format!("axiom: {s}\ngoal: p(a)"));
        }

        #[test]
        fn parser_total_on_lif_alphabet(s in "[a-zA-Z(),.&~> -]{0,40}") {
            match parse_lif(&format!("axiom: {s}\ngoal: p(a)")) {
                Ok(t) => prop_assert!(t.is_valid()),
                Err(e) => prop_assert!(e.line >= 1 && e.column >= 1),
            }
        }
    }
}
