//! Threshold-free OoD metrics and the evaluation report.
//!
//! All metrics treat in-distribution as the positive class and assume the
//! crate-wide orientation (larger score = more in-distribution). A sample is
//! accepted as in-distribution at threshold `t` when `score ≥ t`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::ScoreSet;

/// Fraction of in-distribution samples that must be accepted.
pub const TARGET_TPR: f64 = 0.95;

/// Scores of both populations merged and sorted descending, with
/// the in/out counts at each distinct value.
struct Levels {
    /// (in count, out count) per distinct score, highest score first.
    counts: Vec<(usize, usize)>,
    n_in: usize,
    n_out: usize,
}

impl Levels {
    fn new(scores: &ScoreSet) -> Self {
        let mut all: Vec<(f64, bool)> = scores
            .in_scores()
            .iter()
            .map(|&s| (s, true))
            .chain(scores.out_scores().iter().map(|&s| (s, false)))
            .collect();
        all.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
        let mut counts: Vec<(usize, usize)> = Vec::new();
        let mut prev: Option<f64> = None;
        for (s, is_in) in all {
            if prev != Some(s) {
                counts.push((0, 0));
                prev = Some(s);
            }
            let last = counts.last_mut().unwrap();
            if is_in {
                last.0 += 1;
            } else {
                last.1 += 1;
            }
        }
        Levels {
            counts,
            n_in: scores.in_scores().len(),
            n_out: scores.out_scores().len(),
        }
    }

    /// Cumulative (accepted in, accepted out) as the threshold lowers
    /// through each distinct score.
    fn cumulative(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.counts.iter().scan((0, 0), |acc, &(i, o)| {
            acc.0 += i;
            acc.1 += o;
            Some(*acc)
        })
    }
}

/// Probability that a random in-score beats a random out-score, ties
/// counting one half; in percent.
pub fn auroc(scores: &ScoreSet) -> f64 {
    let levels = Levels::new(scores);
    // For each level, out samples lose to every in sample above and tie
    // with the in samples at the same level.
    let mut in_above = 0usize;
    let mut wins = 0.0f64;
    for &(i, o) in levels.counts.iter() {
        wins += o as f64 * (in_above as f64 + 0.5 * i as f64);
        in_above += i;
    }
    100.0 * wins / (levels.n_in as f64 * levels.n_out as f64)
}

/// Largest threshold that accepts at least 95% of in-distribution scores.
pub fn tpr95_threshold(in_scores: &[f64]) -> f64 {
    let mut sorted = in_scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let required = (95 * n).div_ceil(100);
    sorted[n - required]
}

/// True-negative rate on OoD scores at the 95%-TPR threshold; in percent.
pub fn tnr_at_tpr95(scores: &ScoreSet) -> f64 {
    let tau = tpr95_threshold(scores.in_scores());
    let rejected = scores.out_scores().iter().filter(|&&s| s < tau).count();
    100.0 * rejected as f64 / scores.out_scores().len() as f64
}

/// Best balanced accuracy `0.5·TPR + 0.5·TNR` over all thresholds; in percent.
pub fn detection_accuracy(scores: &ScoreSet) -> f64 {
    let levels = Levels::new(scores);
    let (n_in, n_out) = (levels.n_in as f64, levels.n_out as f64);
    // Threshold above every score: nothing accepted.
    let mut best = 0.5;
    for (tp, fp) in levels.cumulative() {
        let acc = 0.5 * tp as f64 / n_in + 0.5 * (1.0 - fp as f64 / n_out);
        best = f64::max(best, acc);
    }
    100.0 * best
}

/// Step-wise area under the precision-recall curve with in-distribution as
/// positive: `Σ (R_t − R_{t−1}) · P_t` over distinct thresholds; in percent.
pub fn aupr(scores: &ScoreSet) -> f64 {
    let levels = Levels::new(scores);
    let n_in = levels.n_in as f64;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (tp, fp) in levels.cumulative() {
        let recall = tp as f64 / n_in;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    100.0 * area
}

/// The four metrics plus enough context to print a results-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detector: String,
    pub benchmark: String,
    pub tnr_at_tpr95: f64,
    pub auroc: f64,
    pub dtacc: f64,
    pub aupr: f64,
    pub n_in: usize,
    pub n_out: usize,
    /// Always "in-distribution"; recorded so readers know which AUPR this is.
    pub aupr_positive_class: String,
}

pub fn evaluate(scores: &ScoreSet) -> EvalReport {
    EvalReport {
        detector: String::new(),
        benchmark: String::new(),
        tnr_at_tpr95: tnr_at_tpr95(scores),
        auroc: auroc(scores),
        dtacc: detection_accuracy(scores),
        aupr: aupr(scores),
        n_in: scores.in_scores().len(),
        n_out: scores.out_scores().len(),
        aupr_positive_class: "in-distribution".into(),
    }
}

impl EvalReport {
    pub fn named(mut self, detector: impl Into<String>, benchmark: impl Into<String>) -> Self {
        self.detector = detector.into();
        self.benchmark = benchmark.into();
        self
    }
}

/// Renders reports as an aligned text table.
pub fn format_table(reports: &[EvalReport]) -> String {
    let headers = ["Benchmark", "Method", "TNR@TPR95", "AUROC", "DTACC", "AUPR-In", "n_in", "n_out"];
    let rows: Vec<[String; 8]> = reports
        .iter()
        .map(|r| {
            [
                r.benchmark.clone(),
                r.detector.clone(),
                format!("{:.2}", r.tnr_at_tpr95),
                format!("{:.2}", r.auroc),
                format!("{:.2}", r.dtacc),
                format!("{:.2}", r.aupr),
                r.n_in.to_string(),
                r.n_out.to_string(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i < 2 {
                let _ = write!(out, "{cell:<w$}");
            } else {
                let _ = write!(out, "{cell:>w$}");
            }
            out.push_str(if i + 1 == cells.len() { "\n" } else { "  " });
        }
    };
    line(&mut out, &headers);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &rows {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out.push_str("AUPR-In: in-distribution samples are the positive class.\n");
    out
}
