//! Conversion of closed LIF formulas into function-free clauses.
//!
//! Existentials are replaced by Skolem constants when no universal encloses
//! them; an existential under a universal would need a Skolem function,
//! which the clause language does not have.

use std::collections::BTreeMap;
use std::fmt;

use crate::formal::{Formula, Term};

pub(crate) type Sym = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum T {
    Var(u32),
    Const(Sym),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct Lit {
    pub pred: Sym,
    pub positive: bool,
    pub args: Vec<T>,
}

/// Symbol table shared by every clause of one proof attempt.
#[derive(Debug, Default, Clone)]
pub(crate) struct Symbols {
    names: Vec<String>,
    index: BTreeMap<String, Sym>,
}

impl Symbols {
    pub fn intern(&mut self, name: &str) -> Sym {
        if let Some(&s) = self.index.get(name) {
            return s;
        }
        let s = self.names.len() as Sym;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), s);
        s
    }

    pub fn name(&self, s: Sym) -> &str {
        &self.names[s as usize]
    }

    pub fn lit<'a>(&'a self, lit: &'a Lit) -> LitDisplay<'a> {
        LitDisplay { syms: self, lit }
    }
}

pub(crate) struct LitDisplay<'a> {
    syms: &'a Symbols,
    lit: &'a Lit,
}

impl fmt::Display for LitDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.lit.positive {
            f.write_str("~")?;
        }
        write!(f, "{}(", self.syms.name(self.lit.pred))?;
        for (i, a) in self.lit.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            match a {
                T::Var(v) => write!(f, "V{v}")?,
                T::Const(c) => f.write_str(self.syms.name(*c))?,
            }
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unsupported(pub String);

#[derive(Debug, Clone)]
enum Nnf {
    Lit(Lit),
    And(Vec<Nnf>),
    Or(Vec<Nnf>),
    All(Box<Nnf>),
    Ex(u32, Box<Nnf>),
}

const MAX_CLAUSES_PER_FORMULA: usize = 4096;

pub(crate) struct Clausifier<'a> {
    pub syms: &'a mut Symbols,
    next_var: u32,
    next_skolem: u32,
}

impl<'a> Clausifier<'a> {
    pub fn new(syms: &'a mut Symbols) -> Self {
        Self {
            syms,
            next_var: 0,
            next_skolem: 0,
        }
    }

    /// Clauses of `f` (or of its negation when `negate` is set).
    pub fn clauses(&mut self, f: &Formula, negate: bool) -> Result<Vec<Vec<Lit>>, Unsupported> {
        let mut env = Vec::new();
        let nnf = self.nnf(f, !negate, &mut env)?;
        let mut subst = BTreeMap::new();
        let body = self.skolemize(nnf, 0, &mut subst)?;
        cnf(&body)
    }

    fn nnf(&mut self, f: &Formula, positive: bool, env: &mut Vec<(String, u32)>) -> Result<Nnf, Unsupported> {
        Ok(match f {
            Formula::Atom { pred, args } => {
                let pred = self.syms.intern(pred);
                let mut out = Vec::with_capacity(args.len());
                for a in args {
                    out.push(match a {
                        Term::Const(c) => T::Const(self.syms.intern(c)),
                        Term::Var(v) => {
                            let id = env
                                .iter()
                                .rev()
                                .find(|(n, _)| n == v)
                                .map(|(_, id)| *id)
                                .ok_or_else(|| Unsupported(format!("free variable `{v}`")))?;
                            T::Var(id)
                        }
                    });
                }
                Nnf::Lit(Lit {
                    pred,
                    positive,
                    args: out,
                })
            }
            Formula::Not(g) => self.nnf(g, !positive, env)?,
            Formula::And(a, b) => {
                let (a, b) = (self.nnf(a, positive, env)?, self.nnf(b, positive, env)?);
                if positive {
                    Nnf::And(vec![a, b])
                } else {
                    Nnf::Or(vec![a, b])
                }
            }
            Formula::Implies(a, b) => {
                let (a, b) = (self.nnf(a, !positive, env)?, self.nnf(b, positive, env)?);
                if positive {
                    Nnf::Or(vec![a, b])
                } else {
                    Nnf::And(vec![a, b])
                }
            }
            Formula::ForAll(v, body) | Formula::Exists(v, body) => {
                let universal = matches!(f, Formula::ForAll(..)) == positive;
                let id = self.next_var;
                self.next_var += 1;
                env.push((v.clone(), id));
                let body = self.nnf(body, positive, env);
                env.pop();
                let body = Box::new(body?);
                if universal {
                    Nnf::All(body)
                } else {
                    Nnf::Ex(id, body)
                }
            }
        })
    }

    fn skolemize(&mut self, f: Nnf, universals: usize, subst: &mut BTreeMap<u32, Sym>) -> Result<Nnf, Unsupported> {
        Ok(match f {
            Nnf::Lit(mut l) => {
                for a in &mut l.args {
                    if let T::Var(v) = a {
                        if let Some(&c) = subst.get(v) {
                            *a = T::Const(c);
                        }
                    }
                }
                Nnf::Lit(l)
            }
            Nnf::And(fs) => Nnf::And(
                fs.into_iter()
                    .map(|g| self.skolemize(g, universals, subst))
                    .collect::<Result<_, _>>()?,
            ),
            Nnf::Or(fs) => Nnf::Or(
                fs.into_iter()
                    .map(|g| self.skolemize(g, universals, subst))
                    .collect::<Result<_, _>>()?,
            ),
            Nnf::All(body) => self.skolemize(*body, universals + 1, subst)?,
            Nnf::Ex(v, body) => {
                if universals > 0 {
                    return Err(Unsupported(
                        "existential quantifier inside a universal needs a Skolem function".into(),
                    ));
                }
                self.next_skolem += 1;
                // `#` cannot occur in LIF identifiers, so no clash with user constants
                let c = self.syms.intern(&format!("#sk{}", self.next_skolem));
                subst.insert(v, c);
                self.skolemize(*body, universals, subst)?
            }
        })
    }
}

fn cnf(f: &Nnf) -> Result<Vec<Vec<Lit>>, Unsupported> {
    Ok(match f {
        Nnf::Lit(l) => vec![vec![l.clone()]],
        Nnf::And(fs) => {
            let mut out = Vec::new();
            for g in fs {
                out.extend(cnf(g)?);
            }
            out
        }
        Nnf::Or(fs) => {
            let mut acc: Vec<Vec<Lit>> = vec![Vec::new()];
            for g in fs {
                let part = cnf(g)?;
                let mut next = Vec::with_capacity(acc.len() * part.len());
                for a in &acc {
                    for b in &part {
                        let mut c = a.clone();
                        c.extend(b.iter().cloned());
                        next.push(c);
                    }
                }
                if next.len() > MAX_CLAUSES_PER_FORMULA {
                    return Err(Unsupported("clause normal form too large".into()));
                }
                acc = next;
            }
            acc
        }
        Nnf::All(..) | Nnf::Ex(..) => unreachable!("quantifiers removed by skolemization"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formal::parse_formula;

    fn show(f: &str, negate: bool) -> Result<Vec<String>, Unsupported> {
        let mut syms = Symbols::default();
        let f = parse_formula(f).unwrap();
        let cls = Clausifier::new(&mut syms).clauses(&f, negate)?;
        Ok(cls
            .iter()
            .map(|c| {
                c.iter()
                    .map(|l| syms.lit(l).to_string())
                    .collect::<Vec<_>>()
                    .join(" | ")
            })
            .collect())
    }

    #[test]
    fn implication_becomes_disjunction() {
        assert_eq!(
            show("forall X. (reads_book(X) -> smart(X))", false).unwrap(),
            vec!["~reads_book(V0) | smart(V0)"]
        );
    }

    #[test]
    fn negated_goal() {
        assert_eq!(show("smart(harry)", true).unwrap(), vec!["~smart(harry)"]);
        // negating a universal goal introduces a Skolem constant
        assert_eq!(show("forall X. p(X)", true).unwrap(), vec!["~p(#sk1)"]);
    }

    #[test]
    fn conjunction_distributes() {
        let got = show("(p(a) & q(a)) -> r(a)", false).unwrap();
        assert_eq!(got, vec!["~p(a) | ~q(a) | r(a)"]);
        let got = show("p(a) -> (q(a) & r(a))", false).unwrap();
        assert_eq!(got, vec!["~p(a) | q(a)", "~p(a) | r(a)"]);
    }

    #[test]
    fn existential_under_universal_is_unsupported() {
        assert!(show("forall X. (p(X) -> exists Y. q(X, Y))", false).is_err());
        assert!(show("exists Y. forall X. q(X, Y)", false).is_ok());
        // a negated universal goal inside a universal context
        assert!(show("forall X. exists Y. q(X, Y)", true).is_ok());
    }
}
