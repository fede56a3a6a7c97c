use serde::{Deserialize, Serialize};

use crate::error::{HainError, Result};
use crate::numerics::Matrix;

use super::InterpretabilityMetrics;

/// Tolerance on score rows summing to one.
const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// `K x K` counts, true class by predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn from_labels(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(HainError::shape(format!(
                "{} labels vs {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        let mut counts = vec![vec![0u64; n_classes]; n_classes];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= n_classes || p >= n_classes {
                return Err(HainError::contract(format!("class index out of range 0..{n_classes}")));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionCounts { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    /// Samples predicted as `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    /// Samples whose true class is `c`.
    pub fn actual(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 of class `c`, with `0/0 = 0`.
pub fn class_prf(cm: &ConfusionCounts, c: usize) -> (f64, f64, f64) {
    let tp = cm.true_positives(c);
    let p = ratio(tp, cm.predicted(c));
    let r = ratio(tp, cm.actual(c));
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// One operating point per distinct score threshold, highest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// Cumulative (true positive, false positive) counts at each distinct
/// threshold, scanning scores from high to low.
fn threshold_counts(positive: &[bool], scores: &[f64]) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (pos, &i) in order.iter().enumerate() {
        if positive[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(pos + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_tie {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

/// ROC curve as (false positive rate, true positive rate), starting at the
/// origin. `None` when either class is absent.
pub fn roc_curve(positive: &[bool], scores: &[f64]) -> Option<Vec<CurvePoint>> {
    let n_pos = positive.iter().filter(|&&p| p).count() as u64;
    let n_neg = positive.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut pts = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    pts.extend(
        threshold_counts(positive, scores)
            .into_iter()
            .map(|(t, tp, fp)| CurvePoint {
                threshold: t,
                x: fp as f64 / n_neg as f64,
                y: tp as f64 / n_pos as f64,
            }),
    );
    Some(pts)
}

/// Precision-recall curve as (recall, precision), anchored at (0, 1).
/// `None` without positives.
pub fn pr_curve(positive: &[bool], scores: &[f64]) -> Option<Vec<CurvePoint>> {
    let n_pos = positive.iter().filter(|&&p| p).count() as u64;
    if n_pos == 0 {
        return None;
    }
    let mut pts = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 1.0,
    }];
    pts.extend(
        threshold_counts(positive, scores)
            .into_iter()
            .map(|(t, tp, fp)| CurvePoint {
                threshold: t,
                x: tp as f64 / n_pos as f64,
                y: tp as f64 / (tp + fp) as f64,
            }),
    );
    Some(pts)
}

/// Trapezoidal area under a curve whose `x` is nondecreasing.
pub fn trapezoid(points: &[CurvePoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * (w[1].y + w[0].y) / 2.0)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub n_classes: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// One-vs-rest, `None` for classes absent from the labels or present in
    /// every label.
    pub auc_roc: Vec<Option<f64>>,
    pub macro_auc_roc: Option<f64>,
    pub auc_pr: Vec<Option<f64>>,
    pub macro_auc_pr: Option<f64>,
    pub confusion: ConfusionCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpretability: Option<InterpretabilityMetrics>,
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

fn check_scores(y_true: &[usize], y_pred: &[usize], scores: &Matrix) -> Result<()> {
    if y_true.is_empty() {
        return Err(HainError::contract("no samples to score"));
    }
    if y_pred.len() != y_true.len() || scores.rows() != y_true.len() {
        return Err(HainError::shape(format!(
            "{} labels, {} predictions, {} score rows",
            y_true.len(),
            y_pred.len(),
            scores.rows()
        )));
    }
    for r in 0..scores.rows() {
        let row = scores.row(r);
        let s: f64 = row.iter().sum();
        if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (s - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(HainError::contract(format!(
                "score row {r} is not a probability vector"
            )));
        }
    }
    Ok(())
}

/// Accuracy, macro precision/recall/F1 and one-vs-rest AUCs.
pub fn classification_metrics(y_true: &[usize], y_pred: &[usize], scores: &Matrix) -> Result<MetricsReport> {
    check_scores(y_true, y_pred, scores)?;
    let k = scores.cols();
    let cm = ConfusionCounts::from_labels(y_true, y_pred, k)?;
    let prf: Vec<(f64, f64, f64)> = (0..k).map(|c| class_prf(&cm, c)).collect();
    let macro_of = |f: fn(&(f64, f64, f64)) -> f64| prf.iter().map(f).sum::<f64>() / k as f64;
    let correct: u64 = (0..k).map(|c| cm.true_positives(c)).sum();

    let mut auc_roc = Vec::with_capacity(k);
    let mut auc_pr = Vec::with_capacity(k);
    for c in 0..k {
        let positive: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
        let col: Vec<f64> = (0..scores.rows()).map(|r| scores.get(r, c)).collect();
        auc_roc.push(roc_curve(&positive, &col).map(|p| trapezoid(&p)));
        auc_pr.push(pr_curve(&positive, &col).map(|p| trapezoid(&p)));
    }
    Ok(MetricsReport {
        n_samples: y_true.len(),
        n_classes: k,
        accuracy: correct as f64 / y_true.len() as f64,
        macro_precision: macro_of(|t| t.0),
        macro_recall: macro_of(|t| t.1),
        macro_f1: macro_of(|t| t.2),
        macro_auc_roc: mean_defined(&auc_roc),
        auc_roc,
        macro_auc_pr: mean_defined(&auc_pr),
        auc_pr,
        confusion: cm,
        interpretability: None,
    })
}

/// ROC and PR series of one class; `None` where the curve is undefined.
pub type ClassCurves = (Option<Vec<CurvePoint>>, Option<Vec<CurvePoint>>);

/// Per-class one-vs-rest ROC and PR point series.
pub fn curves(y_true: &[usize], scores: &Matrix) -> Vec<ClassCurves> {
    (0..scores.cols())
        .map(|c| {
            let positive: Vec<bool> = y_true.iter().map(|&t| t == c).collect();
            let col: Vec<f64> = (0..scores.rows()).map(|r| scores.get(r, c)).collect();
            (roc_curve(&positive, &col), pr_curve(&positive, &col))
        })
        .collect()
}
