//! Teacher → student quad correspondence and the loss terms built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{quad_distance, PseudoLabel, Quad};

/// One student index per teacher quad, in teacher order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondence {
    pub pairs: Vec<(usize, usize)>,
}

impl Correspondence {
    pub fn student_for(&self, teacher: usize) -> Option<usize> {
        self.pairs.get(teacher).map(|&(_, s)| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_qmt: f64,
    pub lambda_gmf: f64,
    pub warmup_steps: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_qmt: 0.05,
            lambda_gmf: 5e-4,
            warmup_steps: 100,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_qmt >= 0.0 && self.lambda_gmf >= 0.0) {
            return Err(Error::Config("weights: loss weights must be >= 0".into()));
        }
        if self.warmup_steps == 0 {
            return Err(Error::Config("weights: warmup_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub consistency: f64,
    pub pseudo_label: f64,
    pub total: f64,
    pub effective_lambda_qmt: f64,
}

/// Index of the quad in `candidates` whose center is nearest to `target`'s.
pub fn nearest_by_center(target: &Quad, candidates: &[Quad]) -> Result<usize> {
    let mut best = None;
    let mut best_dist = f64::INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let d = (c.center - target.center).norm_squared();
        if best.is_none() || d < best_dist {
            best = Some(i);
            best_dist = d;
        }
    }
    best.ok_or(Error::NoCandidates)
}

/// For each teacher quad, the student quad with the nearest center.
///
/// The mapping is one-way: several teachers may land on the same student.
pub fn match_quads(teacher: &[Quad], student: &[Quad]) -> Result<Correspondence> {
    if student.is_empty() {
        return Err(Error::NoCandidates);
    }
    let pairs = teacher
        .iter()
        .enumerate()
        .map(|(t, q)| nearest_by_center(q, student).map(|s| (t, s)))
        .collect::<Result<_>>()?;
    Ok(Correspondence { pairs })
}

/// Mean teacher-confidence-weighted distance from each teacher quad to its
/// matched student quad. Zero for an empty teacher set.
pub fn consistency_loss(teacher: &[Quad], student: &[Quad]) -> Result<f64> {
    if teacher.is_empty() {
        return Ok(0.0);
    }
    let matching = match_quads(teacher, student)?;
    let sum: f64 = matching
        .pairs
        .iter()
        .map(|&(t, s)| quad_distance(&student[s], &teacher[t]) * teacher[t].quadness)
        .sum();
    Ok(sum / teacher.len() as f64)
}

/// Distance between the refined pseudo-label and the student quad matched to
/// the teacher quad it was refined from.
pub fn pseudo_label_loss(teacher_target: &Quad, refined: &PseudoLabel, student: &[Quad]) -> Result<f64> {
    let s = nearest_by_center(teacher_target, student)?;
    Ok(quad_distance(&student[s], refined.quad()))
}

/// Probability floor inside the cross-entropy terms.
pub const BCE_EPS: f64 = 1e-6;

fn bce(p: f64, target: bool) -> f64 {
    if target {
        -p.max(BCE_EPS).ln()
    } else {
        -(1.0 - p).max(BCE_EPS).ln()
    }
}

/// Surrogate supervised loss.
///
/// Predictions and ground truths are paired by a minimum-cost one-to-one
/// assignment on [`quad_distance`]. The loss is the mean matched distance plus
/// the mean cross-entropy between quadness and the matched indicator. Each
/// unmatched ground truth adds one cross-entropy term as if predicted with
/// quadness 0.
pub fn supervised_loss(pred: &[Quad], gt: &[Quad]) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 0.0;
    }
    let cost: Vec<Vec<f64>> = pred
        .iter()
        .map(|p| gt.iter().map(|g| quad_distance(p, g)).collect())
        .collect();
    let pairs = min_cost_assignment(&cost);

    let matched_mean = if pairs.is_empty() {
        0.0
    } else {
        pairs.iter().map(|&(i, j)| cost[i][j]).sum::<f64>() / pairs.len() as f64
    };

    let mut pred_matched = vec![false; pred.len()];
    let mut gt_matched = vec![false; gt.len()];
    for &(i, j) in &pairs {
        pred_matched[i] = true;
        gt_matched[j] = true;
    }
    let mut bce_sum: f64 = pred
        .iter()
        .zip(&pred_matched)
        .map(|(p, &m)| bce(p.quadness, m))
        .sum();
    let unmatched_gt = gt_matched.iter().filter(|m| !**m).count();
    bce_sum += unmatched_gt as f64 * bce(0.0, true);
    let bce_mean = bce_sum / (pred.len() + unmatched_gt) as f64;

    matched_mean + bce_mean
}

/// Minimum-cost one-to-one assignment for a rectangular cost matrix given as
/// rows. Returns `min(rows, cols)` `(row, col)` pairs sorted by row.
///
/// Shortest augmenting path with potentials, O(n²m).
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| cost[i][j]).collect())
            .collect();
        let mut pairs: Vec<(usize, usize)> = min_cost_assignment(&transposed)
            .into_iter()
            .map(|(j, i)| (i, j))
            .collect();
        pairs.sort_unstable();
        return pairs;
    }

    // 1-based potentials; column 0 is a virtual source.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Consistency ramp `exp(-5 (1 - min(step / warmup, 1))²)`.
pub fn warmup_weight(step: u64, warmup_steps: u64) -> f64 {
    let t = (step as f64 / warmup_steps.max(1) as f64).min(1.0);
    let r = 1.0 - t;
    (-5.0 * r * r).exp()
}

pub fn total_loss(sup: f64, cons: f64, pseudo: f64, weights: &LossWeights, step: u64) -> LossBreakdown {
    let effective_lambda_qmt = weights.lambda_qmt * warmup_weight(step, weights.warmup_steps);
    LossBreakdown {
        supervised: sup,
        consistency: cons,
        pseudo_label: pseudo,
        total: sup + effective_lambda_qmt * cons + weights.lambda_gmf * pseudo,
        effective_lambda_qmt,
    }
}
