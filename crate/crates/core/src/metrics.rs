//! Detection metrics: confusion-based scores, AUC-ROC and average precision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("empty input")]
    Empty,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn count(predictions: &[u8], labels: &[u8]) -> Result<Self, MetricsError> {
        check_len(predictions.len(), labels.len())?;
        let mut c = Confusion { tp: 0, fp: 0, fn_: 0, tn: 0 };
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p != 0, l != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }
}

fn check_len(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch { a, b });
    }
    if a == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Zero denominators give 0 rather than NaN.
pub fn confusion_metrics(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMetrics, MetricsError> {
    let c = Confusion::count(predictions, labels)?;
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ConfusionMetrics {
        precision,
        recall,
        f1,
        accuracy: ratio(c.tp + c.tn, labels.len()),
    })
}

/// Groups of tied scores in descending order, as (positives, negatives).
fn tie_groups(scores: &[f64], labels: &[u8]) -> Result<Vec<(usize, usize)>, MetricsError> {
    check_len(scores.len(), labels.len())?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last = f64::NAN;
    for i in order {
        if scores[i] != last {
            groups.push((0, 0));
            last = scores[i];
        }
        let g = groups.last_mut().expect("pushed");
        if labels[i] != 0 {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    Ok(groups)
}

/// Area under the ROC curve by a descending sweep with trapezoids over ties,
/// equal to `P(score+ > score-) + P(tie) / 2`.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    let groups = tie_groups(scores, labels)?;
    let pos: usize = groups.iter().map(|g| g.0).sum();
    let neg: usize = groups.iter().map(|g| g.1).sum();
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let (mut tp, mut area) = (0.0, 0.0);
    for &(p, n) in &groups {
        area += n as f64 * (tp + p as f64 / 2.0);
        tp += p as f64;
    }
    Ok(area / (pos as f64 * neg as f64))
}

/// Average precision: sum over thresholds of recall gain times precision.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    let groups = tie_groups(scores, labels)?;
    let pos: usize = groups.iter().map(|g| g.0).sum();
    if pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    let (mut tp, mut fp, mut ap) = (0usize, 0usize, 0.0);
    for &(p, n) in &groups {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

impl MetricsReport {
    pub const FIELDS: [&'static str; 6] = ["auc_roc", "auc_pr", "f1", "precision", "recall", "accuracy"];

    pub fn evaluate(scores: &[f64], predictions: &[u8], labels: &[u8]) -> Result<Self, MetricsError> {
        let c = confusion_metrics(predictions, labels)?;
        Ok(MetricsReport {
            auc_roc: auc_roc(scores, labels)?,
            auc_pr: auc_pr(scores, labels)?,
            f1: c.f1,
            precision: c.precision,
            recall: c.recall,
            accuracy: c.accuracy,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [self.auc_roc, self.auc_pr, self.f1, self.precision, self.recall, self.accuracy]
    }

    fn from_values(v: [f64; 6]) -> Self {
        MetricsReport {
            auc_roc: v[0],
            auc_pr: v[1],
            f1: v[2],
            precision: v[3],
            recall: v[4],
            accuracy: v[5],
        }
    }
}

/// Mean and population standard deviation of each metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub mean: MetricsReport,
    pub std: MetricsReport,
}

pub fn aggregate(reports: &[MetricsReport]) -> Option<Aggregate> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let mut mean = [0.0; 6];
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v / n;
        }
    }
    let mut var = [0.0; 6];
    for r in reports {
        for ((s, v), m) in var.iter_mut().zip(r.values()).zip(mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    Some(Aggregate {
        runs: reports.len(),
        mean: MetricsReport::from_values(mean),
        std: MetricsReport::from_values(var.map(f64::sqrt)),
    })
}

/// Median; the two middle values are averaged for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}
