//! SFT targets and DPO preference pairs from scored rollout pools.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::substream;
use crate::scoring::ScoredRow;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("scoring configs differ: {left} vs {right}")]
    ConfigMismatch { left: String, right: String },
    #[error("duplicate scored record ({problem_id}, {response_id}, refined={refined})")]
    DuplicateKey {
        problem_id: String,
        response_id: String,
        refined: bool,
    },
    #[error("invalid thresholds: hi ({hi}) must exceed lo ({lo})")]
    InvalidThresholds { hi: f64, lo: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Maxmin,
    DualThreshold,
    RandomMid,
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "maxmin" => Ok(Self::Maxmin),
            "dual" | "dual_threshold" => Ok(Self::DualThreshold),
            "random" | "random_mid" => Ok(Self::RandomMid),
            other => Err(format!("unknown pairing strategy `{other}`")),
        }
    }
}

/// One scored response eligible for selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub response_id: String,
    pub refined: bool,
    pub score: f64,
    pub rv: f64,
    /// Canonical rendering of the trace.
    pub target: String,
}

impl Candidate {
    /// Deterministic tie-break order: lowest response id, originals first.
    fn order(&self, other: &Self) -> Ordering {
        (self.response_id.as_str(), self.refined).cmp(&(other.response_id.as_str(), other.refined))
    }

    fn label(&self) -> String {
        if self.refined {
            format!("{}+refined", self.response_id)
        } else {
            self.response_id.clone()
        }
    }
}

/// All candidates for one problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemPool {
    pub problem_id: String,
    pub prompt: String,
    pub candidates: Vec<Candidate>,
}

impl ProblemPool {
    fn sorted(&self) -> Vec<&Candidate> {
        let mut cs: Vec<&Candidate> = self.candidates.iter().collect();
        cs.sort_by(|a, b| a.order(b));
        cs
    }
}

/// One line of `sft.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub target: String,
    pub score: f64,
    pub problem_id: String,
    pub response_id: String,
}

/// One line of `dpo.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
    pub strategy: Strategy,
    pub problem_id: String,
    pub chosen_id: String,
    pub rejected_id: String,
}

fn by_problem(pools: &[ProblemPool]) -> Vec<&ProblemPool> {
    let mut ps: Vec<&ProblemPool> = pools.iter().filter(|p| !p.candidates.is_empty()).collect();
    ps.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    ps
}

/// Highest score, first in tie-break order among equals.
fn argmax<'a>(cs: &[&'a Candidate]) -> &'a Candidate {
    cs.iter()
        .copied()
        .reduce(|best, c| if c.score > best.score { c } else { best })
        .expect("non-empty pool")
}

fn argmin<'a>(cs: &[&'a Candidate]) -> &'a Candidate {
    cs.iter()
        .copied()
        .reduce(|best, c| if c.score < best.score { c } else { best })
        .expect("non-empty pool")
}

/// Best-scored response per problem.
pub fn build_sft(pools: &[ProblemPool]) -> Vec<SftRecord> {
    by_problem(pools)
        .into_iter()
        .map(|p| {
            let best = argmax(&p.sorted());
            SftRecord {
                prompt: p.prompt.clone(),
                target: best.target.clone(),
                score: best.score,
                problem_id: p.problem_id.clone(),
                response_id: best.response_id.clone(),
            }
        })
        .collect()
}

fn pair(p: &ProblemPool, chosen: &Candidate, rejected: &Candidate, strategy: Strategy) -> PreferencePair {
    debug_assert!(chosen.score > rejected.score);
    PreferencePair {
        prompt: p.prompt.clone(),
        chosen: chosen.target.clone(),
        rejected: rejected.target.clone(),
        chosen_score: chosen.score,
        rejected_score: rejected.score,
        strategy,
        problem_id: p.problem_id.clone(),
        chosen_id: chosen.label(),
        rejected_id: rejected.label(),
    }
}

/// Highest-scored response against the lowest; all-equal pools are skipped.
pub fn build_dpo_maxmin(pools: &[ProblemPool]) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for p in by_problem(pools) {
        let cs = p.sorted();
        let (hi, lo) = (argmax(&cs), argmin(&cs));
        if hi.score > lo.score {
            out.push(pair(p, hi, lo, Strategy::Maxmin));
        }
    }
    out
}

/// Every response scoring at least `hi` against every response scoring at
/// most `lo`.
pub fn build_dpo_dual_threshold(pools: &[ProblemPool], hi: f64, lo: f64) -> Result<Vec<PreferencePair>, DatasetError> {
    if !(hi > lo) {
        return Err(DatasetError::InvalidThresholds { hi, lo });
    }
    let mut out = Vec::new();
    for p in by_problem(pools) {
        let cs = p.sorted();
        for c in cs.iter().filter(|c| c.score >= hi) {
            for r in cs.iter().filter(|r| r.score <= lo) {
                out.push(pair(p, c, r, Strategy::DualThreshold));
            }
        }
    }
    Ok(out)
}

/// One seeded draw above 0.5 against one below 0.5 per problem.
pub fn build_dpo_random_mid(pools: &[ProblemPool], seed: u64) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for p in by_problem(pools) {
        let cs = p.sorted();
        let above: Vec<&Candidate> = cs.iter().copied().filter(|c| c.score > 0.5).collect();
        let below: Vec<&Candidate> = cs.iter().copied().filter(|c| c.score < 0.5).collect();
        if above.is_empty() || below.is_empty() {
            continue;
        }
        let mut rng = substream(seed, "random_mid", &p.problem_id);
        let c = above[rng.random_range(0..above.len())];
        let r = below[rng.random_range(0..below.len())];
        out.push(pair(p, c, r, Strategy::RandomMid));
    }
    out
}

/// `D_r ∪ D_refined`, keyed by (problem, response, refined flag), sorted.
pub fn merge_final(d_r: Vec<ScoredRow>, d_refined: Vec<ScoredRow>) -> Result<Vec<ScoredRow>, DatasetError> {
    let mut cfg: Option<String> = None;
    let mut merged: BTreeMap<(String, String, bool), ScoredRow> = BTreeMap::new();
    for row in d_r.into_iter().chain(d_refined) {
        match &cfg {
            None => cfg = Some(row.cfg.clone()),
            Some(c) if *c != row.cfg => {
                return Err(DatasetError::ConfigMismatch {
                    left: c.clone(),
                    right: row.cfg.clone(),
                })
            }
            Some(_) => {}
        }
        let key = row.key();
        if merged.contains_key(&key) {
            return Err(DatasetError::DuplicateKey {
                problem_id: key.0,
                response_id: key.1,
                refined: key.2,
            });
        }
        merged.insert(key, row);
    }
    Ok(merged.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{LogicSource, StepRow};

    fn pool(pid: &str, scores: &[f64]) -> ProblemPool {
        ProblemPool {
            problem_id: pid.into(),
            prompt: "prompt".into(),
            candidates: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| Candidate {
                    response_id: format!("r{i}"),
                    refined: false,
                    score: s,
                    rv: s,
                    target: format!("trace {i}"),
                })
                .collect(),
        }
    }

    #[test]
    fn sft_argmax_and_ties() {
        let s = build_sft(&[pool("p", &[0.9, 0.2, 0.5])]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].response_id, "r0");
        assert_eq!(s[0].score, 0.9);
        let s = build_sft(&[pool("p", &[0.4; 4])]);
        assert_eq!(s[0].response_id, "r0");
        assert!(build_sft(&[pool("empty", &[])]).is_empty());
    }

    #[test]
    fn maxmin_cases() {
        let d = build_dpo_maxmin(&[pool("p", &[0.9, 0.2])]);
        assert_eq!((d[0].chosen_score, d[0].rejected_score), (0.9, 0.2));
        assert!(build_dpo_maxmin(&[pool("p", &[0.5; 8])]).is_empty());
        let d = build_dpo_maxmin(&[pool("p", &[0.1, 0.9, 0.9, 0.1])]);
        assert_eq!((d[0].chosen_id.as_str(), d[0].rejected_id.as_str()), ("r1", "r0"));
    }

    #[test]
    fn dual_threshold_cases() {
        assert_eq!(
            build_dpo_dual_threshold(&[pool("p", &[0.8, 0.9, 0.1])], 0.75, 0.25)
                .unwrap()
                .len(),
            2
        );
        assert!(build_dpo_dual_threshold(&[pool("p", &[0.5, 0.1])], 0.75, 0.25)
            .unwrap()
            .is_empty());
        assert_eq!(
            build_dpo_dual_threshold(&[pool("p", &[0.8, 0.8, 0.2, 0.1])], 0.75, 0.25)
                .unwrap()
                .len(),
            4
        );
        assert!(build_dpo_dual_threshold(&[], 0.25, 0.75).is_err());
    }

    #[test]
    fn random_mid_cases() {
        let a = build_dpo_random_mid(&[pool("p", &[0.9, 0.6, 0.3])], 11);
        assert_eq!(a.len(), 1);
        assert_eq!(a, build_dpo_random_mid(&[pool("p", &[0.9, 0.6, 0.3])], 11));
        assert_eq!(a[0].rejected_id, "r2");
        assert!(build_dpo_random_mid(&[pool("p", &[0.9, 0.6])], 11).is_empty());
        assert!(build_dpo_random_mid(&[pool("p", &[0.5, 0.9])], 11).is_empty());
    }

    fn srow(pid: &str, rid: &str, refined: bool, cfg: &str) -> ScoredRow {
        ScoredRow {
            problem_id: pid.into(),
            response_id: rid.into(),
            steps: vec![StepRow {
                i: 1,
                pv: 1.0,
                lv: 1.0,
                src: LogicSource::Prover,
            }],
            rv: 1.0,
            ov: None,
            score: 1.0,
            cfg: cfg.into(),
            run: "run".into(),
            refined,
        }
    }

    #[test]
    fn merge_cases() {
        let d_r = vec![srow("p2", "r0", false, "c"), srow("p1", "r1", false, "c")];
        let merged = merge_final(d_r.clone(), vec![]).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].problem_id, "p1");
        let merged = merge_final(d_r.clone(), vec![srow("p1", "r1", true, "c")]).unwrap();
        assert_eq!(merged.len(), 3);
        assert!(matches!(
            merge_final(d_r.clone(), vec![srow("p1", "r1", false, "c")]),
            Err(DatasetError::DuplicateKey { .. })
        ));
        assert!(matches!(
            merge_final(d_r, vec![srow("p1", "r1", true, "other")]),
            Err(DatasetError::ConfigMismatch { .. })
        ));
    }
}
