//! Confusion counts, scalar classification metrics and ranking curves.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// `Standard` uses the usual definitions. `PaperLiteral` keeps two nonstandard
/// variants for audit: precision as `TN / (TN + FP)` and an MCC denominator
/// with `(FP + FN)` in place of `(TP + FN)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricMode {
    #[default]
    Standard,
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub mcc: f64,
    pub mode: MetricMode,
    pub counts: ConfusionCounts,
    /// Metrics whose denominator was zero and were reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

pub fn confusion_counts(y_true: &[usize], y_pred: &[usize], positive: usize) -> Result<ConfusionCounts> {
    if y_true.len() != y_pred.len() {
        return Err(Error::dim(format!(
            "{} truths vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t == positive, p == positive) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: f64, den: f64, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        flags.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

pub fn binary_metrics(counts: &ConfusionCounts, mode: MetricMode) -> Result<MetricReport> {
    let n = counts.total();
    if n == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let (tp, tn, fp, fn_) = (counts.tp as f64, counts.tn as f64, counts.fp as f64, counts.fn_ as f64);
    let mut flags = Vec::new();
    let accuracy = (tp + tn) / n as f64;
    let recall = ratio(tp, tp + fn_, "recall", &mut flags);
    let precision = match mode {
        MetricMode::Standard => ratio(tp, tp + fp, "precision", &mut flags),
        MetricMode::PaperLiteral => ratio(tn, tn + fp, "precision", &mut flags),
    };
    let f1 = ratio(2.0 * precision * recall, precision + recall, "f1", &mut flags);
    let second = match mode {
        MetricMode::Standard => tp + fn_,
        MetricMode::PaperLiteral => fp + fn_,
    };
    let mcc = ratio(
        tp * tn - fp * fn_,
        ((tp + fp) * second * (tn + fp) * (tn + fn_)).sqrt(),
        "mcc",
        &mut flags,
    );
    Ok(MetricReport {
        accuracy,
        recall,
        precision,
        f1,
        mcc,
        mode,
        counts: *counts,
        degenerate: flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassReport {
    pub per_class: Vec<MetricReport>,
    /// Unweighted mean over classes, with accuracy set to the overall
    /// fraction correct. `counts` holds the summed one-vs-rest cells.
    pub macro_avg: MetricReport,
}

pub fn multiclass_metrics(
    y_true: &[usize],
    y_pred: &[usize],
    classes: usize,
    mode: MetricMode,
) -> Result<MulticlassReport> {
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&l| l >= classes) {
        return Err(Error::Label {
            label: bad as i64,
            classes,
        });
    }
    if y_true.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let per_class = (0..classes)
        .map(|c| binary_metrics(&confusion_counts(y_true, y_pred, c)?, mode))
        .collect::<Result<Vec<_>>>()?;
    let k = classes as f64;
    let mean = |f: fn(&MetricReport) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let correct = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    let mut counts = ConfusionCounts::default();
    let mut degenerate = Vec::new();
    for (c, r) in per_class.iter().enumerate() {
        counts.tp += r.counts.tp;
        counts.tn += r.counts.tn;
        counts.fp += r.counts.fp;
        counts.fn_ += r.counts.fn_;
        degenerate.extend(r.degenerate.iter().map(|d| format!("{d}[{c}]")));
    }
    let macro_avg = MetricReport {
        accuracy: correct as f64 / y_true.len() as f64,
        recall: mean(|r| r.recall),
        precision: mean(|r| r.precision),
        f1: mean(|r| r.f1),
        mcc: mean(|r| r.mcc),
        mode,
        counts,
        degenerate,
    };
    Ok(MulticlassReport { per_class, macro_avg })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Roc,
    Pr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub kind: CurveKind,
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Trapezoidal area under a polyline with non-decreasing x.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

/// ROC or precision-recall curve, thresholding at each distinct score from
/// high to low. Tied scores enter together at one threshold.
pub fn ranking_curves(scores: &[f64], positives: &[bool], kind: CurveKind) -> Result<CurveSeries> {
    if scores.len() != positives.len() {
        return Err(Error::dim(format!(
            "{} scores vs {} labels",
            scores.len(),
            positives.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::data(format!("non-finite score at index {i}")));
    }
    let pos = positives.iter().filter(|&&p| p).count();
    let neg = positives.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(
            "ranking curves need both positive and negative samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    if kind == CurveKind::Roc {
        points.push((0.0, 0.0));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        match kind {
            CurveKind::Roc => points.push((fp as f64 / neg as f64, tp as f64 / pos as f64)),
            CurveKind::Pr => {
                let precision = tp as f64 / (tp + fp) as f64;
                if points.is_empty() {
                    points.push((0.0, precision));
                }
                points.push((tp as f64 / pos as f64, precision));
            }
        }
    }
    let auc = trapezoid(&points);
    Ok(CurveSeries { kind, points, auc })
}

/// Write several named curves as CSV: a `# kind=<roc|pr>` line, then
/// `series,x,y` rows.
pub fn write_curves_csv(path: &Path, kind: CurveKind, curves: &[(String, CurveSeries)]) -> Result<()> {
    let mut out = Vec::new();
    let k = match kind {
        CurveKind::Roc => "roc",
        CurveKind::Pr => "pr",
    };
    writeln!(out, "# kind={k}").unwrap();
    writeln!(out, "series,x,y").unwrap();
    for (name, c) in curves {
        for (x, y) in &c.points {
            writeln!(out, "{name},{x},{y}").unwrap();
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
