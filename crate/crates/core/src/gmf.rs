//! Mixture-model point filtering and quad re-estimation.
//!
//! For one quad, every point's hybrid metric is collected, affinely mapped
//! into (0, 1) and fitted with a two-component mixture whose component density
//! is `Γ(a+b)/(Γ(a)Γ(b)) x^(a-1) (1-x)^(b-1)`. A point is kept when the
//! weighted density of the lower-mean ("belongs to the quad") component is at
//! least that of the other one. The kept points then give a new center,
//! normal and size, with quadness 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::geometry::{point_quad_metrics, quad_axes, PointCloud, PseudoLabel, Quad, Vec2, Vec3};

/// Fewer samples than this give the single-component fallback.
pub const MIN_FIT_SAMPLES: usize = 20;
/// Shape parameters are kept inside `[SHAPE_MIN, SHAPE_MAX]`.
pub const SHAPE_MIN: f64 = 1.0;
pub const SHAPE_MAX: f64 = 1e3;
/// Minimum number of kept points for re-estimation.
pub const MIN_SUPPORT: usize = 4;
const MIN_SPREAD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Number of quantile levels drawn for the size estimate.
    pub k_s: usize,
    /// Lower end of the quantile-level range.
    pub tau_min: f64,
    pub em_max_iters: usize,
    /// EM stops once the log-likelihood gains less than this.
    pub em_tol: f64,
    /// Normalized metrics are clamped into `[pdf_clamp, 1 - pdf_clamp]`.
    pub pdf_clamp: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            k_s: 100,
            tau_min: 0.1,
            em_max_iters: 100,
            em_tol: 1e-6,
            pdf_clamp: 1e-4,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("refine: {m}")));
        if self.k_s == 0 {
            return bad("k_s must be positive".into());
        }
        if !(self.tau_min > 0.0 && self.tau_min < 1.0) {
            return bad(format!("tau_min {} outside (0, 1)", self.tau_min));
        }
        if self.em_max_iters == 0 {
            return bad("em_max_iters must be positive".into());
        }
        if !(self.em_tol >= 0.0) {
            return bad("em_tol must be >= 0".into());
        }
        if !(self.pdf_clamp > 0.0 && self.pdf_clamp < 0.5) {
            return bad(format!("pdf_clamp {} outside (0, 0.5)", self.pdf_clamp));
        }
        Ok(())
    }
}

/// Shape parameters of one mixture component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaShape {
    pub a: f64,
    pub b: f64,
}

impl BetaShape {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    fn ln_norm(&self) -> f64 {
        ln_gamma(self.a + self.b) - ln_gamma(self.a) - ln_gamma(self.b)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_norm() + (self.a - 1.0) * x.ln() + (self.b - 1.0) * (1.0 - x).ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Weighted method-of-moments estimate, with the concentration `a + b`
    /// limited so both shapes stay in range while the mean is preserved.
    fn from_moments(mean: f64, var: f64) -> Self {
        let m = mean.clamp(1e-12, 1.0 - 1e-12);
        let var = var.max(1e-300);
        let mut conc = m * (1.0 - m) / var - 1.0;
        let hi = SHAPE_MAX / m.max(1.0 - m);
        let lo = SHAPE_MIN / m.min(1.0 - m);
        if lo <= hi {
            conc = conc.clamp(lo, hi);
        }
        Self {
            a: (m * conc).clamp(SHAPE_MIN, SHAPE_MAX),
            b: ((1.0 - m) * conc).clamp(SHAPE_MIN, SHAPE_MAX),
        }
    }

    fn lerp(&self, other: &Self, t: f64) -> Self {
        Self {
            a: self.a + t * (other.a - self.a),
            b: self.b + t * (other.b - self.b),
        }
    }
}

/// Affine map from raw metrics into the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
    pub clamp: f64,
}

impl Normalization {
    pub fn apply(&self, raw: f64) -> f64 {
        ((raw - self.offset) / self.scale).clamp(self.clamp, 1.0 - self.clamp)
    }

    pub fn to_raw(&self, x: f64) -> f64 {
        self.offset + self.scale * x
    }
}

/// Two-component mixture. Component 0 has the lower mean and stands for
/// points that belong to the quad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub weights: [f64; 2],
    pub shapes: [BetaShape; 2],
    pub normalization: Normalization,
    /// Single-component fallback: every point is kept.
    pub degenerate: bool,
}

impl MixtureModel {
    fn fallback(normalization: Normalization) -> Self {
        Self {
            weights: [1.0, 0.0],
            shapes: [BetaShape::new(1.0, 1.0); 2],
            normalization,
            degenerate: true,
        }
    }

    /// `ln(w_k P(x | θ_k))` for a normalized metric.
    pub fn ln_weighted_density(&self, k: usize, x: f64) -> f64 {
        self.weights[k].ln() + self.shapes[k].ln_pdf(x)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.weights[0] * self.shapes[0].pdf(x) + self.weights[1] * self.shapes[1].pdf(x)
    }

    /// Posterior of the "belongs" component at a normalized metric.
    pub fn belong_posterior(&self, x: f64) -> f64 {
        if self.degenerate {
            return 1.0;
        }
        let l0 = self.ln_weighted_density(0, x);
        let l1 = self.ln_weighted_density(1, x);
        1.0 / (1.0 + (l1 - l0).exp())
    }

    /// Keep rule on a raw metric.
    pub fn keeps(&self, raw: f64) -> bool {
        if self.degenerate {
            return true;
        }
        let x = self.normalization.apply(raw);
        self.ln_weighted_density(0, x) >= self.ln_weighted_density(1, x)
    }

    /// Component mean mapped back to raw metric units.
    pub fn raw_mean(&self, k: usize) -> f64 {
        self.normalization.to_raw(self.shapes[k].mean())
    }

    pub fn log_likelihood(&self, raw: &[f64]) -> f64 {
        let xs: Vec<f64> = raw.iter().map(|&r| self.normalization.apply(r)).collect();
        Samples::new(&xs).log_likelihood(self)
    }
}

/// Starting assignment for EM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixtureInit {
    /// Lower half of the sorted samples seeds component 0.
    #[default]
    MedianSplit,
    /// Lower half seeds component 1.
    MedianSplitSwapped,
    /// The lowest `p` percent seed component 0, with weights `p/100` and
    /// `1 - p/100`.
    LowerPercent(u8),
}

/// Starts tried by [`fit_mixture`]. A wall quad in a full room owns only a
/// small share of the points, and from the median split alone EM tends to
/// settle on "opposite wall vs. everything else".
pub const FIT_STARTS: [MixtureInit; 3] = [
    MixtureInit::MedianSplit,
    MixtureInit::LowerPercent(25),
    MixtureInit::LowerPercent(10),
];

/// A fitted mixture with its EM log-likelihood trace (initial value first).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub model: MixtureModel,
    pub log_likelihood: Vec<f64>,
}

impl MixtureFit {
    pub fn iterations(&self) -> usize {
        self.log_likelihood.len().saturating_sub(1)
    }
}

struct Samples {
    ln_x: Vec<f64>,
    ln_1mx: Vec<f64>,
    xs: Vec<f64>,
}

impl Samples {
    fn new(xs: &[f64]) -> Self {
        Self {
            ln_x: xs.iter().map(|x| x.ln()).collect(),
            ln_1mx: xs.iter().map(|x| (1.0 - x).ln()).collect(),
            xs: xs.to_vec(),
        }
    }

    fn component_ln(&self, shape: &BetaShape, weight: f64, out: &mut [f64]) {
        let base = weight.ln() + shape.ln_norm();
        for ((o, lx), l1x) in out.iter_mut().zip(&self.ln_x).zip(&self.ln_1mx) {
            *o = base + (shape.a - 1.0) * lx + (shape.b - 1.0) * l1x;
        }
    }

    fn log_likelihood(&self, model: &MixtureModel) -> f64 {
        let n = self.xs.len();
        let mut l0 = vec![0.0; n];
        let mut l1 = vec![0.0; n];
        self.component_ln(&model.shapes[0], model.weights[0], &mut l0);
        self.component_ln(&model.shapes[1], model.weights[1], &mut l1);
        l0.iter().zip(&l1).map(|(&a, &b)| log_add(a, b)).sum()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Responsibilities of component 0 under the last evaluated model, kept so
/// the next E-step can reuse them.
struct EmState {
    resp: Vec<f64>,
}

impl EmState {
    fn new(n: usize) -> Self {
        Self { resp: vec![0.0; n] }
    }

    fn evaluate(&mut self, samples: &Samples, model: &MixtureModel) -> f64 {
        let [s0, s1] = model.shapes;
        let base0 = model.weights[0].ln() + s0.ln_norm();
        let base1 = model.weights[1].ln() + s1.ln_norm();
        // Each point contributes max(a, b) + ln(1 + e) with e in [0, 1]; the
        // (1 + e) factors are multiplied in chunks small enough not to
        // overflow, so only one logarithm is taken per chunk.
        const CHUNK: usize = 512;
        let mut total = 0.0;
        let resp = self.resp.chunks_mut(CHUNK);
        let lx = samples.ln_x.chunks(CHUNK);
        let l1x = samples.ln_1mx.chunks(CHUNK);
        for ((rs, lxs), l1xs) in resp.zip(lx).zip(l1x) {
            let mut prod = 1.0;
            for ((r, &lx), &l1x) in rs.iter_mut().zip(lxs).zip(l1xs) {
                let a = base0 + (s0.a - 1.0) * lx + (s0.b - 1.0) * l1x;
                let b = base1 + (s1.a - 1.0) * lx + (s1.b - 1.0) * l1x;
                let d = b - a;
                if d.is_nan() {
                    // both components are -inf here
                    *r = 0.5;
                    total += a.max(b);
                    continue;
                }
                let e = (-d.abs()).exp();
                *r = if d > 0.0 { e / (1.0 + e) } else { 1.0 / (1.0 + e) };
                total += a.max(b);
                prod *= 1.0 + e;
            }
            total += prod.ln();
        }
        total
    }

    /// Mixture weight of component 0 and the weighted (mass, mean, variance)
    /// of each component.
    fn m_step_moments(&self, xs: &[f64]) -> (f64, [(f64, f64, f64); 2]) {
        let n = xs.len() as f64;
        let (mut w0, mut sx0, mut sx1) = (0.0, 0.0, 0.0);
        for (&r, &x) in self.resp.iter().zip(xs) {
            w0 += r;
            sx0 += r * x;
            sx1 += (1.0 - r) * x;
        }
        let w1 = n - w0;
        let m0 = if w0 > 0.0 { sx0 / w0 } else { 0.5 };
        let m1 = if w1 > 0.0 { sx1 / w1 } else { 0.5 };
        let (mut v0, mut v1) = (0.0, 0.0);
        for (&r, &x) in self.resp.iter().zip(xs) {
            v0 += r * (x - m0) * (x - m0);
            v1 += (1.0 - r) * (x - m1) * (x - m1);
        }
        let var = |v: f64, w: f64| if w > 0.0 { v / w } else { 1.0 / 12.0 };
        (w0 / n, [(w0, m0, var(v0, w0)), (w1, m1, var(v1, w1))])
    }
}

fn moments(xs: &[f64], weights: Option<&[f64]>) -> (f64, f64, f64) {
    let (mut sw, mut sx) = (0.0, 0.0);
    for (i, &x) in xs.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        sw += w;
        sx += w * x;
    }
    if sw <= 0.0 {
        return (0.0, 0.5, 1.0 / 12.0);
    }
    let mean = sx / sw;
    let var = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| weights.map_or(1.0, |w| w[i]) * (x - mean).powi(2))
        .sum::<f64>()
        / sw;
    (sw, mean, var)
}

pub fn normalization_for(metrics: &[f64], config: &RefineConfig) -> (Normalization, bool) {
    let lo = metrics.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = metrics.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    let usable = metrics.len() >= MIN_FIT_SAMPLES && spread.is_finite() && spread >= MIN_SPREAD;
    let norm = Normalization {
        offset: if lo.is_finite() { lo } else { 0.0 },
        scale: if usable { spread } else { 1.0 },
        clamp: config.pdf_clamp,
    };
    (norm, usable)
}

/// Per-point hybrid metric between `q` and every point, in cloud order.
pub fn collect_metrics(q: &Quad, cloud: &PointCloud) -> Result<Vec<f64>> {
    let normals = cloud.normals().ok_or(Error::NormalsRequired)?;
    Ok(cloud
        .points()
        .iter()
        .zip(normals)
        .map(|(p, n)| {
            point_quad_metrics(
                &crate::geometry::OrientedPoint {
                    position: *p,
                    normal: *n,
                },
                q,
            )
            .total
        })
        .collect())
}

pub fn fit_mixture(metrics: &[f64], config: &RefineConfig) -> MixtureModel {
    fit_mixture_best(metrics, config).model
}

/// Runs EM from every start in [`FIT_STARTS`] and keeps the fit with the
/// highest final log-likelihood (earliest start on ties).
pub fn fit_mixture_best(metrics: &[f64], config: &RefineConfig) -> MixtureFit {
    let prepared = match Prepared::new(metrics, config) {
        Ok(p) => p,
        Err(fallback) => return fallback,
    };
    let mut best: Option<MixtureFit> = None;
    for init in FIT_STARTS {
        let fit = prepared.fit(init, config);
        let better = best
            .as_ref()
            .is_none_or(|b| fit.log_likelihood.last() > b.log_likelihood.last());
        if better {
            best = Some(fit);
        }
    }
    best.expect("at least one start")
}

/// EM fit of the two-component mixture.
///
/// The M-step updates weights in closed form and shapes by weighted moments.
/// Moment matching does not maximize the expected log-likelihood, so a
/// proposal that lowers the likelihood is pulled back toward the previous
/// shapes; the weights-only update never lowers it.
pub fn fit_mixture_traced(metrics: &[f64], config: &RefineConfig, init: MixtureInit) -> MixtureFit {
    match Prepared::new(metrics, config) {
        Ok(p) => p.fit(init, config),
        Err(fallback) => fallback,
    }
}

/// Normalized samples shared by every EM start.
struct Prepared {
    normalization: Normalization,
    samples: Samples,
    sorted: Vec<f64>,
}

impl Prepared {
    /// `Err` carries the fallback fit for unusable metrics.
    fn new(metrics: &[f64], config: &RefineConfig) -> std::result::Result<Self, MixtureFit> {
        let (normalization, usable) = normalization_for(metrics, config);
        if !usable {
            return Err(MixtureFit {
                model: MixtureModel::fallback(normalization),
                log_likelihood: Vec::new(),
            });
        }
        let xs: Vec<f64> = metrics.iter().map(|&m| normalization.apply(m)).collect();
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            normalization,
            samples: Samples::new(&xs),
            sorted,
        })
    }

    fn fit(&self, init: MixtureInit, config: &RefineConfig) -> MixtureFit {
        let (normalization, samples, sorted) = (self.normalization, &self.samples, &self.sorted);
        let xs = &samples.xs;
        let n = xs.len();
        let cut = match init {
            MixtureInit::LowerPercent(p) => ((n * p.min(100) as usize) / 100).clamp(2, n - 2),
            _ => n / 2,
        };
        let (_, m_lo, v_lo) = moments(&sorted[..cut], None);
        let (_, m_hi, v_hi) = moments(&sorted[cut..], None);
        let lower = BetaShape::from_moments(m_lo, v_lo);
        let upper = BetaShape::from_moments(m_hi, v_hi);
        let share = cut as f64 / n as f64;
        let (shapes, weights) = match init {
            MixtureInit::MedianSplitSwapped => ([upper, lower], [0.5, 0.5]),
            MixtureInit::MedianSplit => ([lower, upper], [0.5, 0.5]),
            MixtureInit::LowerPercent(_) => ([lower, upper], [share, 1.0 - share]),
        };
        let mut model = MixtureModel {
            weights,
            shapes,
            normalization,
            degenerate: false,
        };

        let mut state = EmState::new(n);
        let mut ll = state.evaluate(samples, &model);
        let mut trace = vec![ll];
        let mut trial = EmState::new(n);
        for _ in 0..config.em_max_iters {
            let (w0, stats) = state.m_step_moments(xs);
            let weights = [w0, 1.0 - w0];

            let mut proposal = model.shapes;
            for (k, (mass, mean, var)) in stats.into_iter().enumerate() {
                if mass > 1e-9 {
                    proposal[k] = BetaShape::from_moments(mean, var);
                }
            }

            let mut accepted = None;
            for t in [1.0, 0.5, 0.25, 0.125, 0.0] {
                let candidate = MixtureModel {
                    weights,
                    shapes: [
                        model.shapes[0].lerp(&proposal[0], t),
                        model.shapes[1].lerp(&proposal[1], t),
                    ],
                    ..model
                };
                let cand_ll = trial.evaluate(samples, &candidate);
                if cand_ll >= ll || t == 0.0 {
                    accepted = Some((candidate, cand_ll));
                    break;
                }
            }
            let (candidate, cand_ll) = accepted.expect("weights-only step always accepted");
            std::mem::swap(&mut state, &mut trial);
            let gain = cand_ll - ll;
            model = candidate;
            ll = cand_ll;
            trace.push(ll);
            if gain < config.em_tol {
                break;
            }
        }

        if model.shapes[0].mean() > model.shapes[1].mean() {
            model.shapes.swap(0, 1);
            model.weights.swap(0, 1);
        }
        MixtureFit {
            model,
            log_likelihood: trace,
        }
    }
}

/// Indices whose raw metric passes the model's keep rule.
pub fn filter_metrics(metrics: &[f64], model: &MixtureModel) -> Vec<usize> {
    (0..metrics.len())
        .filter(|&i| model.keeps(metrics[i]))
        .collect()
}

/// Indices of points the model attributes to `q`.
pub fn filter_points(q: &Quad, cloud: &PointCloud, model: &MixtureModel) -> Result<Vec<usize>> {
    if model.degenerate {
        return Ok((0..cloud.len()).collect());
    }
    Ok(filter_metrics(&collect_metrics(q, cloud)?, model))
}

/// Fixed-threshold baseline: points within `max_distance` of the quad plane.
pub fn perpendicular_filter(q: &Quad, cloud: &PointCloud, max_distance: f64) -> Vec<usize> {
    cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| (*p - q.center).dot(&q.normal).abs() < max_distance)
        .map(|(i, _)| i)
        .collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = tau.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Re-estimates a quad from the kept points.
///
/// Center is the mean position and normal the normalized sum of point normals
/// (flipped onto `q.normal`'s side first). Each half-extent is
/// `mean_i quantile(τ_i) / τ_i` over in-plane absolute offsets from the new
/// center, with `τ_i` uniform in `[tau_min, 1]`.
pub fn refine_quad(
    q: &Quad,
    cloud: &PointCloud,
    kept: &[usize],
    config: &RefineConfig,
    seed: u64,
) -> Result<Quad> {
    let normals = cloud.normals().ok_or(Error::NormalsRequired)?;
    if kept.len() < MIN_SUPPORT {
        return Err(Error::InsufficientSupport {
            needed: MIN_SUPPORT,
            got: kept.len(),
        });
    }
    let points = cloud.points();
    let count = kept.len() as f64;
    let center = kept
        .iter()
        .fold(Vec3::zeros(), |acc, &i| acc + points[i].coords)
        / count;

    let normal_sum = kept.iter().fold(Vec3::zeros(), |acc, &i| {
        let n = normals[i];
        if n.dot(&q.normal) < 0.0 {
            acc - n
        } else {
            acc + n
        }
    });
    let len = normal_sum.norm();
    if len < 1e-6 {
        return Err(Error::DegenerateNormals(len));
    }
    let mut refined = Quad {
        center: center.into(),
        normal: normal_sum / len,
        half_size: Vec2::zeros(),
        quadness: 1.0,
    };

    let axes = quad_axes(&refined);
    let mut widths = Vec::with_capacity(kept.len());
    let mut heights = Vec::with_capacity(kept.len());
    for &i in kept {
        let d = points[i].coords - center;
        widths.push(d.dot(&axes.x_axis).abs());
        heights.push(d.dot(&axes.z_axis).abs());
    }
    widths.sort_by(f64::total_cmp);
    heights.sort_by(f64::total_cmp);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Vec2::zeros();
    for _ in 0..config.k_s {
        let tau = if config.tau_min < 1.0 {
            rng.random_range(config.tau_min..=1.0)
        } else {
            1.0
        };
        acc.x += quantile_sorted(&widths, tau) / tau;
        acc.y += quantile_sorted(&heights, tau) / tau;
    }
    refined.half_size = acc / config.k_s as f64;
    Ok(refined)
}

/// Index of the most confident quad; ties go to the lowest index.
pub fn select_refine_target(teacher: &[Quad]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, q) in teacher.iter().enumerate() {
        if best.is_none_or(|b| q.quadness > teacher[b].quadness) {
            best = Some(i);
        }
    }
    best.ok_or(Error::NoQuads)
}

/// Result of [`gmf_refine`].
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub refined: PseudoLabel,
    pub kept: Vec<usize>,
    pub model: MixtureModel,
    pub log_likelihood: Vec<f64>,
}

/// Metrics → mixture fit → keep rule → re-estimation.
pub fn gmf_refine(
    q: &Quad,
    cloud: &PointCloud,
    config: &RefineConfig,
    seed: u64,
) -> Result<Refinement> {
    if cloud.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientPoints {
            needed: MIN_FIT_SAMPLES,
            got: cloud.len(),
        });
    }
    let metrics = collect_metrics(q, cloud)?;
    let fit = fit_mixture_best(&metrics, config);
    let kept = filter_metrics(&metrics, &fit.model);
    let refined = refine_quad(q, cloud, &kept, config, seed)?;
    Ok(Refinement {
        refined: PseudoLabel::new(refined)?,
        kept,
        model: fit.model,
        log_likelihood: fit.log_likelihood,
    })
}
