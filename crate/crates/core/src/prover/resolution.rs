//! Saturation-based binary resolution with factoring for function-free clauses.
//!
//! Clauses carry their derivation depth. Resolvents deeper than the budget are
//! dropped and remembered, so a search that runs out of clauses without the
//! empty clause distinguishes `Invalid` (true saturation) from
//! `DepthExhausted`. Subsumption only removes a clause when the subsumer is no
//! deeper, which keeps every refutation within the depth bound reachable.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::time::Instant;

use super::clausify::{Lit, T};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct Clause {
    pub lits: Vec<Lit>,
}

impl Clause {
    /// Sorts, deduplicates and renumbers variables in first-occurrence order.
    /// Returns `None` for tautologies.
    pub fn normalize(mut lits: Vec<Lit>) -> Option<Self> {
        lits.sort();
        lits.dedup();
        for (i, a) in lits.iter().enumerate() {
            for b in &lits[i + 1..] {
                if a.pred == b.pred && a.args == b.args && a.positive != b.positive {
                    return None;
                }
            }
        }
        let mut map: Vec<(u32, u32)> = Vec::new();
        for l in &mut lits {
            for a in &mut l.args {
                if let T::Var(v) = a {
                    let id = match map.iter().find(|(old, _)| old == v) {
                        Some((_, new)) => *new,
                        None => {
                            let new = map.len() as u32;
                            map.push((*v, new));
                            new
                        }
                    };
                    *a = T::Var(id);
                }
            }
        }
        if !map.is_empty() {
            lits.sort();
            lits.dedup();
        }
        Some(Self { lits })
    }

    fn max_var(&self) -> Option<u32> {
        self.lits
            .iter()
            .flat_map(|l| l.args.iter())
            .filter_map(|a| match a {
                T::Var(v) => Some(*v),
                T::Const(_) => None,
            })
            .max()
    }

    fn weight(&self) -> usize {
        self.lits.iter().map(|l| 1 + l.args.len()).sum()
    }

    pub fn is_ground(&self) -> bool {
        self.max_var().is_none()
    }
}

#[derive(Default)]
struct Subst {
    binding: Vec<Option<T>>,
}

impl Subst {
    fn with_vars(n: usize) -> Self {
        Self { binding: vec![None; n] }
    }

    fn walk(&self, mut t: T) -> T {
        while let T::Var(v) = t {
            match self.binding.get(v as usize).copied().flatten() {
                Some(next) => t = next,
                None => break,
            }
        }
        t
    }

    fn unify(&mut self, a: T, b: T) -> bool {
        let (a, b) = (self.walk(a), self.walk(b));
        match (a, b) {
            _ if a == b => true,
            (T::Var(v), other) | (other, T::Var(v)) => {
                self.binding[v as usize] = Some(other);
                true
            }
            (T::Const(_), T::Const(_)) => false,
        }
    }

    fn unify_args(&mut self, xs: &[T], ys: &[T]) -> bool {
        xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| self.unify(*x, *y))
    }

    fn apply(&self, l: &Lit) -> Lit {
        Lit {
            pred: l.pred,
            positive: l.positive,
            args: l.args.iter().map(|a| self.walk(*a)).collect(),
        }
    }
}

fn shift(l: &Lit, offset: u32) -> Lit {
    Lit {
        pred: l.pred,
        positive: l.positive,
        args: l
            .args
            .iter()
            .map(|a| match a {
                T::Var(v) => T::Var(v + offset),
                c => *c,
            })
            .collect(),
    }
}

/// One-way matching: does some σ make `general`σ == `specific`?
fn match_lit(general: &Lit, specific: &Lit, binding: &mut Vec<Option<T>>) -> bool {
    if general.pred != specific.pred
        || general.positive != specific.positive
        || general.args.len() != specific.args.len()
    {
        return false;
    }
    let snapshot = binding.clone();
    for (g, s) in general.args.iter().zip(&specific.args) {
        match g {
            T::Const(_) => {
                if g != s {
                    *binding = snapshot;
                    return false;
                }
            }
            T::Var(v) => match binding[*v as usize] {
                Some(bound) if bound != *s => {
                    *binding = snapshot;
                    return false;
                }
                Some(_) => {}
                None => binding[*v as usize] = Some(*s),
            },
        }
    }
    true
}

fn subsumes_from(general: &[Lit], specific: &[Lit], binding: &mut Vec<Option<T>>) -> bool {
    let Some((first, rest)) = general.split_first() else {
        return true;
    };
    for s in specific {
        let saved = binding.clone();
        if match_lit(first, s, binding) && subsumes_from(rest, specific, binding) {
            return true;
        }
        *binding = saved;
    }
    false
}

/// θ-subsumption: `general` subsumes `specific`.
pub(crate) fn subsumes(general: &Clause, specific: &Clause) -> bool {
    if general.lits.len() > specific.lits.len() {
        return false;
    }
    let n = general.max_var().map_or(0, |v| v as usize + 1);
    let mut binding = vec![None; n];
    subsumes_from(&general.lits, &specific.lits, &mut binding)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchOutcome {
    Refuted,
    Saturated,
    DepthExhausted,
    Timeout,
    ClauseLimit,
}

pub(crate) struct SearchLimits {
    pub max_depth: u32,
    pub deadline: Instant,
    pub max_clauses: usize,
}

pub(crate) struct Search {
    pub outcome: SearchOutcome,
    /// Clauses kept after subsumption when the search stopped.
    pub kept: Vec<Clause>,
    pub generated: usize,
}

struct Entry {
    clause: Clause,
    depth: u32,
}

fn resolvents(a: &Clause, b: &Clause, out: &mut Vec<Vec<Lit>>) {
    let offset = a.max_var().map_or(0, |v| v + 1);
    let b_shifted: Vec<Lit> = b.lits.iter().map(|l| shift(l, offset)).collect();
    let nvars = (offset + b.max_var().map_or(0, |v| v + 1)) as usize;
    for (i, la) in a.lits.iter().enumerate() {
        for (j, lb) in b_shifted.iter().enumerate() {
            if la.pred != lb.pred || la.positive == lb.positive {
                continue;
            }
            let mut s = Subst::with_vars(nvars);
            if !s.unify_args(&la.args, &lb.args) {
                continue;
            }
            let mut lits = Vec::with_capacity(a.lits.len() + b.lits.len() - 2);
            lits.extend(
                a.lits
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != i)
                    .map(|(_, l)| s.apply(l)),
            );
            lits.extend(
                b_shifted
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != j)
                    .map(|(_, l)| s.apply(l)),
            );
            out.push(lits);
        }
    }
}

fn factors(c: &Clause, out: &mut Vec<Vec<Lit>>) {
    let nvars = c.max_var().map_or(0, |v| v as usize + 1);
    if nvars == 0 {
        return;
    }
    for i in 0..c.lits.len() {
        for j in i + 1..c.lits.len() {
            let (a, b) = (&c.lits[i], &c.lits[j]);
            if a.pred != b.pred || a.positive != b.positive {
                continue;
            }
            let mut s = Subst::with_vars(nvars);
            if s.unify_args(&a.args, &b.args) {
                out.push(c.lits.iter().map(|l| s.apply(l)).collect());
            }
        }
    }
}

/// Searches for a refutation of `input`.
pub(crate) fn refute(input: Vec<Vec<Lit>>, limits: &SearchLimits) -> Search {
    let mut seen: HashSet<Clause> = HashSet::new();
    let mut arena: Vec<Entry> = Vec::new();
    let mut queue: BinaryHeap<Reverse<(u32, usize, usize)>> = BinaryHeap::new();
    let mut usable: Vec<usize> = Vec::new();
    let mut truncated = false;

    let mut push = |lits: Vec<Lit>, depth: u32, arena: &mut Vec<Entry>, queue: &mut BinaryHeap<_>| -> Option<bool> {
        let clause = Clause::normalize(lits)?;
        if clause.lits.is_empty() {
            return Some(true);
        }
        if !seen.insert(clause.clone()) {
            return None;
        }
        let id = arena.len();
        queue.push(Reverse((depth, clause.weight(), id)));
        arena.push(Entry { clause, depth });
        Some(false)
    };

    let finish = |outcome, arena: &Vec<Entry>, usable: &Vec<usize>| Search {
        outcome,
        kept: usable.iter().map(|&i| arena[i].clause.clone()).collect(),
        generated: arena.len(),
    };

    for lits in input {
        if push(lits, 0, &mut arena, &mut queue) == Some(true) {
            return finish(SearchOutcome::Refuted, &arena, &usable);
        }
    }

    let mut fresh = Vec::new();
    while let Some(Reverse((depth, _, id))) = queue.pop() {
        if Instant::now() >= limits.deadline {
            return finish(SearchOutcome::Timeout, &arena, &usable);
        }
        if arena.len() > limits.max_clauses {
            return finish(SearchOutcome::ClauseLimit, &arena, &usable);
        }
        let given = arena[id].clause.clone();
        if usable
            .iter()
            .any(|&u| arena[u].depth <= depth && subsumes(&arena[u].clause, &given))
        {
            continue;
        }
        usable.retain(|&u| !(depth <= arena[u].depth && subsumes(&given, &arena[u].clause)));
        usable.push(id);

        fresh.clear();
        factors(&given, &mut fresh);
        let factor_count = fresh.len();
        for &u in &usable {
            resolvents(&given, &arena[u].clause, &mut fresh);
        }
        for (k, lits) in fresh.drain(..).enumerate() {
            // partners were selected earlier, so none is deeper than `given`
            let d = if k < factor_count { depth } else { depth + 1 };
            if d > limits.max_depth {
                if Clause::normalize(lits).is_some() {
                    truncated = true;
                }
                continue;
            }
            if push(lits, d, &mut arena, &mut queue) == Some(true) {
                return finish(SearchOutcome::Refuted, &arena, &usable);
            }
        }
    }
    let outcome = if truncated {
        SearchOutcome::DepthExhausted
    } else {
        SearchOutcome::Saturated
    };
    finish(outcome, &arena, &usable)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lit(pred: u32, positive: bool, args: &[T]) -> Lit {
        Lit {
            pred,
            positive,
            args: args.to_vec(),
        }
    }

    fn limits() -> SearchLimits {
        SearchLimits {
            max_depth: 12,
            deadline: Instant::now() + std::time::Duration::from_secs(5),
            max_clauses: 10_000,
        }
    }

    const A: T = T::Const(10);
    const X: T = T::Var(0);

    #[test]
    fn modus_ponens_refutes() {
        let input = vec![
            vec![lit(0, false, &[X]), lit(1, true, &[X])],
            vec![lit(0, true, &[A])],
            vec![lit(1, false, &[A])],
        ];
        assert_eq!(refute(input, &limits()).outcome, SearchOutcome::Refuted);
    }

    #[test]
    fn affirming_consequent_saturates() {
        let input = vec![
            vec![lit(0, false, &[X]), lit(1, true, &[X])],
            vec![lit(1, true, &[A])],
            vec![lit(0, false, &[A])],
        ];
        assert_eq!(refute(input, &limits()).outcome, SearchOutcome::Saturated);
    }

    #[test]
    fn factoring_needed() {
        // p(X) | p(Y) and ~p(a): needs factoring or two steps
        let input = vec![
            vec![lit(0, true, &[T::Var(0)]), lit(0, true, &[T::Var(1)])],
            vec![lit(0, false, &[A])],
        ];
        assert_eq!(refute(input, &limits()).outcome, SearchOutcome::Refuted);
    }

    #[test]
    fn normalize_drops_tautology_and_renames() {
        assert!(Clause::normalize(vec![lit(0, true, &[A]), lit(0, false, &[A])]).is_none());
        let c = Clause::normalize(vec![lit(0, true, &[T::Var(7)]), lit(1, true, &[T::Var(7)])]).unwrap();
        assert_eq!(c.lits[0].args, vec![T::Var(0)]);
    }

    #[test]
    fn subsumption() {
        let general = Clause::normalize(vec![lit(0, true, &[X])]).unwrap();
        let specific = Clause::normalize(vec![lit(0, true, &[A]), lit(1, true, &[A])]).unwrap();
        assert!(subsumes(&general, &specific));
        assert!(!subsumes(&specific, &general));
        let two_var = Clause::normalize(vec![lit(2, true, &[T::Var(0), T::Var(0)])]).unwrap();
        let diff = Clause::normalize(vec![lit(2, true, &[A, T::Const(11)])]).unwrap();
        assert!(!subsumes(&two_var, &diff));
    }

    #[test]
    fn depth_bound_reports_exhaustion() {
        // chain p0(a) -> p1(a) -> ... -> p20(a); goal p20(a) needs depth 21
        let mut input = vec![vec![lit(0, true, &[A])]];
        for i in 0..20 {
            input.push(vec![lit(i, false, &[X]), lit(i + 1, true, &[X])]);
        }
        input.push(vec![lit(20, false, &[A])]);
        let mut l = limits();
        l.max_depth = 3;
        assert_eq!(refute(input.clone(), &l).outcome, SearchOutcome::DepthExhausted);
        l.max_depth = 40;
        assert_eq!(refute(input, &l).outcome, SearchOutcome::Refuted);
    }
}
