//! Accuracy, confusion matrices, ROC/PR curves and Jaccard overlap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::MaskImage;

pub fn accuracy(preds: &[usize], truths: &[usize]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("accuracy of an empty prediction set".into()));
    }
    let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(preds: &[usize], truths: &[usize], n_classes: usize) -> Result<Self> {
        if preds.len() != truths.len() {
            return Err(Error::Shape("prediction and label counts differ".into()));
        }
        let mut counts = vec![vec![0u64; n_classes]; n_classes];
        for (&p, &t) in preds.iter().zip(truths) {
            if p >= n_classes || t >= n_classes {
                return Err(Error::Data(format!("class id outside 0..{n_classes}")));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { n_classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `(recall, precision)` at each distinct threshold, highest first.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Cumulative (false, true) positive counts at each distinct score,
/// sweeping the threshold downward.
fn threshold_counts(scores: &[f64], labels: &[bool]) -> Result<Vec<(u64, u64)>> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut fp, mut tp) = (0u64, 0u64);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push((fp, tp));
        }
    }
    Ok(out)
}

/// ROC curve over distinct thresholds with trapezoidal area, which equals
/// `P(s+ > s-) + P(s+ = s-) / 2`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::Data("ROC needs both positive and negative labels".into()));
    }
    let mut points = vec![(0.0, 0.0)];
    let mut auc = 0.0;
    for (fp, tp) in threshold_counts(scores, labels)? {
        let (x, y) = (fp as f64 / neg, tp as f64 / pos);
        let &(px, py) = points.last().expect("nonempty");
        auc += (x - px) * (y + py) / 2.0;
        points.push((x, y));
    }
    Ok(RocCurve { points, auc })
}

/// Precision-recall curve with step-wise area `sum (R_k - R_{k-1}) P_k`.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    if pos == 0.0 {
        return Err(Error::Data("precision-recall needs at least one positive".into()));
    }
    let mut points = Vec::new();
    let mut auc = 0.0;
    let mut prev_recall = 0.0;
    for (fp, tp) in threshold_counts(scores, labels)? {
        let recall = tp as f64 / pos;
        let precision = tp as f64 / (tp + fp) as f64;
        auc += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push((recall, precision));
    }
    Ok(PrCurve { points, auc })
}

pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    Ok(pr_curve(scores, labels)?.auc)
}

/// Intersection over union of foreground pixels; two empty masks score 1.
pub fn jaccard(a: &MaskImage, b: &MaskImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Dimensions(format!(
            "masks are {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        inter += usize::from(x == 1 && y == 1);
        union += usize::from(x == 1 || y == 1);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
