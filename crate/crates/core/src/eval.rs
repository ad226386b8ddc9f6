//! Precision, recall and F1 of predicted quads against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{quad_distance, Quad};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchThresholds {
    /// Maximum center distance, meters.
    pub center_max: f64,
    /// Maximum angle between normals, degrees.
    pub normal_max_deg: f64,
    /// Maximum relative half-size error, per axis.
    pub size_rel_max: f64,
    /// Predictions below this quadness are dropped before matching.
    pub quadness_min: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        Self {
            center_max: 0.3,
            normal_max_deg: 15.0,
            size_rel_max: 0.3,
            quadness_min: 0.5,
        }
    }
}

impl MatchThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_max > 0.0 && self.normal_max_deg > 0.0 && self.size_rel_max > 0.0) {
            return Err(Error::Config("eval: geometric thresholds must be positive".into()));
        }
        if !(self.quadness_min > 0.0 && self.quadness_min <= 1.0) {
            return Err(Error::Config(format!("eval: quadness_min {} outside (0, 1]", self.quadness_min)));
        }
        Ok(())
    }

    /// Whether `pred` is close enough to `gt` to count as a hit.
    pub fn accepts(&self, pred: &Quad, gt: &Quad) -> bool {
        if (pred.center - gt.center).norm() > self.center_max {
            return false;
        }
        let angle = pred.normal.dot(&gt.normal).clamp(-1.0, 1.0).acos().to_degrees();
        if angle > self.normal_max_deg {
            return false;
        }
        (0..2).all(|a| (pred.half_size[a] - gt.half_size[a]).abs() <= self.size_rel_max * gt.half_size[a])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictionMatching {
    /// `(prediction, ground truth)` pairs in matching order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
    /// Predictions dropped by the quadness filter.
    pub discarded: Vec<usize>,
}

/// Greedy one-to-one matching in descending quadness order. Each prediction
/// takes the nearest (by quad distance) still-free ground truth that passes
/// every threshold.
pub fn match_predictions(preds: &[Quad], gts: &[Quad], th: &MatchThresholds) -> PredictionMatching {
    let mut out = PredictionMatching::default();
    let mut order: Vec<usize> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        if p.quadness < th.quadness_min {
            out.discarded.push(i);
        } else {
            order.push(i);
        }
    }
    order.sort_by(|&a, &b| preds[b].quadness.total_cmp(&preds[a].quadness));

    let mut taken = vec![false; gts.len()];
    for &i in &order {
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] || !th.accepts(&preds[i], g) {
                continue;
            }
            let d = quad_distance(&preds[i], g);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        match best {
            Some((_, j)) => {
                taken[j] = true;
                out.pairs.push((i, j));
            }
            None => out.unmatched_preds.push(i),
        }
    }
    out.unmatched_preds.sort_unstable();
    out.unmatched_gts = (0..gts.len()).filter(|&j| !taken[j]).collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        // 2PR/(P+R) with a single rounding
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }

    /// Sums counts over several reports and recomputes the rates.
    pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a EvalReport>) -> Self {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for r in reports {
            tp += r.true_positives;
            fp += r.false_positives;
            fn_ += r.false_negatives;
        }
        Self::from_counts(tp, fp, fn_)
    }
}

pub fn prf1(preds: &[Quad], gts: &[Quad], th: &MatchThresholds) -> EvalReport {
    let m = match_predictions(preds, gts, th);
    EvalReport::from_counts(m.pairs.len(), m.unmatched_preds.len(), m.unmatched_gts.len())
}
