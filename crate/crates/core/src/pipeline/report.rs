//! LogicScore distribution report with an optional before/after comparison.

use serde::{Deserialize, Serialize};

use crate::scoring::{LogicSource, ScoredRow};

pub const BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub traces: u64,
    pub steps: u64,
    /// Counts over 20 equal-width bins of [0, 1]; a score of 1 falls in the last bin.
    pub histogram: Vec<u64>,
    pub mean: f64,
    /// Share of steps whose formalization was well formed.
    pub syntax_valid_rate: f64,
    /// Share of steps the prover accepted.
    pub logic_valid_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub before: DistributionReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<DistributionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_delta: Option<f64>,
}

pub fn bin_of(score: f64) -> usize {
    ((score * BINS as f64).floor().max(0.0) as usize).min(BINS - 1)
}

/// `rows` must be non-empty.
pub fn distribution(rows: &[ScoredRow]) -> DistributionReport {
    let mut histogram = vec![0u64; BINS];
    let mut steps = 0u64;
    let mut syntax = 0u64;
    let mut logic = 0u64;
    for r in rows {
        histogram[bin_of(r.score)] += 1;
        for s in &r.steps {
            steps += 1;
            if s.src == LogicSource::Prover {
                syntax += 1;
                if s.lv == 1.0 {
                    logic += 1;
                }
            }
        }
    }
    let rate = |k: u64| if steps == 0 { 0.0 } else { k as f64 / steps as f64 };
    DistributionReport {
        traces: rows.len() as u64,
        steps,
        histogram,
        mean: rows.iter().map(|r| r.score).sum::<f64>() / rows.len().max(1) as f64,
        syntax_valid_rate: rate(syntax),
        logic_valid_rate: rate(logic),
    }
}

fn render_one(title: &str, d: &DistributionReport, out: &mut String) {
    out.push_str(&format!(
        "{title}: {} traces, {} steps, mean LogicScore {:.4}\n",
        d.traces, d.steps, d.mean
    ));
    out.push_str(&format!(
        "  syntax-valid steps {:.4}, logic-valid steps {:.4}\n",
        d.syntax_valid_rate, d.logic_valid_rate
    ));
    let peak = d.histogram.iter().copied().max().unwrap_or(0).max(1);
    for (i, &c) in d.histogram.iter().enumerate() {
        let lo = i as f64 / BINS as f64;
        let hi = (i + 1) as f64 / BINS as f64;
        let close = if i + 1 == BINS { ']' } else { ')' };
        let bar = "#".repeat((c * 40).div_ceil(peak) as usize);
        out.push_str(&format!("  [{lo:.2}, {hi:.2}{close} {c:>6} {bar}\n"));
    }
}

pub fn render_report(summary: &ReportSummary) -> String {
    let mut out = String::new();
    render_one("before", &summary.before, &mut out);
    if let Some(after) = &summary.after {
        render_one("after", after, &mut out);
    }
    if let Some(delta) = summary.mean_delta {
        out.push_str(&format!(
            "mean LogicScore {:.4} -> {:.4} (delta {delta:+.4})\n",
            summary.before.mean,
            summary.before.mean + delta
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::StepRow;

    fn row(score: f64, lv: f64, src: LogicSource) -> ScoredRow {
        ScoredRow {
            problem_id: "p".into(),
            response_id: "r".into(),
            steps: vec![StepRow { i: 1, pv: 1.0, lv, src }],
            rv: score,
            ov: None,
            score,
            cfg: "c".into(),
            run: "r".into(),
            refined: false,
        }
    }

    #[test]
    fn all_ones_in_top_bin() {
        let d = distribution(&vec![row(1.0, 1.0, LogicSource::Prover); 3]);
        assert_eq!(d.mean, 1.0);
        assert_eq!(d.histogram[BINS - 1], 3);
        assert_eq!(d.histogram.iter().sum::<u64>(), 3);
        assert_eq!(d.logic_valid_rate, 1.0);
    }

    #[test]
    fn bins_and_rates() {
        assert_eq!(bin_of(0.0), 0);
        assert_eq!(bin_of(0.049999), 0);
        assert_eq!(bin_of(0.05), 1);
        assert_eq!(bin_of(0.75), 15);
        let d = distribution(&[row(0.2, 0.0, LogicSource::Prover), row(0.6, 0.7, LogicSource::Fallback)]);
        assert_eq!(d.syntax_valid_rate, 0.5);
        assert_eq!(d.logic_valid_rate, 0.0);
        assert!((d.mean - 0.4).abs() < 1e-12);
    }

    #[test]
    fn rendering_mentions_delta() {
        let before = distribution(&[row(0.25, 0.0, LogicSource::Prover)]);
        let after = distribution(&[row(0.75, 1.0, LogicSource::Prover)]);
        let s = ReportSummary {
            mean_delta: Some(after.mean - before.mean),
            before,
            after: Some(after),
        };
        let text = render_report(&s);
        assert!(text.contains("0.2500 -> 0.7500 (delta +0.5000)"), "{text}");
    }
}
