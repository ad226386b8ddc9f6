//! A network-free mean-teacher loop.
//!
//! The "model" for a scene is a flat vector of quad parameters. The student is
//! moved by finite-difference gradient descent on the total loss; the teacher
//! follows as an exponential moving average of the student. Predictions are
//! equivariant by construction: the student's output for a transformed scene
//! is the transformed decoded quads, and teacher outputs are transformed after
//! decoding.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{prf1, EvalReport, MatchThresholds};
use crate::geometry::{PointCloud, PseudoLabel, Quad, Vec2, Vec3};
use crate::gmf::{gmf_refine, select_refine_target, RefineConfig};
use crate::matching::{consistency_loss, pseudo_label_loss, supervised_loss, total_loss, LossBreakdown, LossWeights};
use crate::synth::{generate_scene, perturb_quad, random_footprint, SceneSpec};
use crate::transforms::{
    apply_transform_cloud, apply_transform_quads, child_seeds, farthest_point_sampling, sample_transform, Transform,
    TransformConfig,
};

/// Parameters per quad: center (3), normal (3), half size (2), quadness (1).
pub const QUAD_PARAMS: usize = 9;

/// Subsampling seed used when downsampling is switched off.
const FIXED_SUBSAMPLE_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn from_quads(quads: &[Quad]) -> Self {
        let mut v = Vec::with_capacity(quads.len() * QUAD_PARAMS);
        for q in quads {
            v.extend_from_slice(q.center.coords.as_slice());
            v.extend_from_slice(q.normal.as_slice());
            v.extend_from_slice(q.half_size.as_slice());
            v.push(q.quadness);
        }
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn quad_count(&self) -> usize {
        self.0.len() / QUAD_PARAMS
    }

    /// Decodes to valid quads: normals normalized, sizes clamped at zero,
    /// quadness clamped to `[0, 1]`.
    pub fn decode(&self) -> Vec<Quad> {
        decode_slice(&self.0)
    }

    /// Rewrites the parameters to their decoded (valid) values.
    pub fn project(&mut self) {
        let quads = self.decode();
        *self = Self::from_quads(&quads);
    }
}

fn decode_slice(params: &[f64]) -> Vec<Quad> {
    params
        .chunks_exact(QUAD_PARAMS)
        .map(|c| {
            let raw = Vec3::new(c[3], c[4], c[5]);
            let len = raw.norm();
            let normal = if len > 1e-12 && len.is_finite() {
                raw / len
            } else {
                Vec3::new(1.0, 0.0, 0.0)
            };
            Quad {
                center: [c[0], c[1], c[2]].into(),
                normal,
                half_size: Vec2::new(c[6].max(0.0), c[7].max(0.0)),
                quadness: c[8].clamp(0.0, 1.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmaConfig {
    pub decay: f64,
    pub lr: f64,
    pub fd_epsilon: f64,
    pub steps: u64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self {
            decay: 0.999,
            lr: 0.01,
            fd_epsilon: 1e-4,
            steps: 500,
        }
    }
}

impl EmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::Config(format!("ema: decay {} outside [0, 1)", self.decay)));
        }
        if !(self.lr > 0.0 && self.fd_epsilon > 0.0) {
            return Err(Error::Config("ema: lr and fd_epsilon must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("ema: steps must be positive".into()));
        }
        Ok(())
    }
}

/// `decay · teacher + (1 - decay) · student`, elementwise.
pub fn ema_update(teacher: &ParamVector, student: &ParamVector, decay: f64) -> Result<ParamVector> {
    if teacher.len() != student.len() {
        return Err(Error::LengthMismatch {
            left: teacher.len(),
            right: student.len(),
        });
    }
    Ok(ParamVector(
        teacher
            .0
            .iter()
            .zip(&student.0)
            .map(|(t, s)| decay * t + (1.0 - decay) * s)
            .collect(),
    ))
}

/// Central-difference gradient.
pub fn finite_diff_grad(loss: impl Fn(&[f64]) -> f64, params: &ParamVector, eps: f64) -> Result<ParamVector> {
    let check = |v: f64, what: &str| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLoss {
                step: 0,
                detail: format!("loss is {v} at {what}"),
            })
        }
    };
    check(loss(&params.0), "the base point")?;
    let mut probe = params.0.clone();
    let mut grad = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = check(loss(&probe), "a forward probe")?;
        probe[i] = orig - eps;
        let down = check(loss(&probe), "a backward probe")?;
        probe[i] = orig;
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(ParamVector(grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanTeacherState {
    pub student: ParamVector,
    pub teacher: ParamVector,
}

impl MeanTeacherState {
    /// Student and teacher both start from `quads`.
    pub fn from_quads(quads: &[Quad]) -> Self {
        let p = ParamVector::from_quads(quads);
        Self {
            student: p.clone(),
            teacher: p,
        }
    }
}

/// A training scene; `gt` is `None` for unlabeled scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainScene {
    pub cloud: PointCloud,
    pub gt: Option<Vec<Quad>>,
}

/// Everything a training step needs besides state and scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainConfig {
    pub transform: TransformConfig,
    pub refine: RefineConfig,
    pub weights: LossWeights,
    pub ema: EmaConfig,
}

impl TrainConfig {
    pub fn from_run_config(c: &RunConfig) -> Self {
        Self {
            transform: c.transform.clone(),
            refine: c.refine,
            weights: c.weights,
            ema: c.ema,
        }
    }
}

/// The step loss as a function of student parameters, with all
/// teacher-derived targets frozen.
#[derive(Debug, Clone)]
pub struct StepObjective {
    pub transform: Transform,
    pub teacher: Vec<Quad>,
    pub gt: Option<Vec<Quad>>,
    /// Teacher quad chosen for refinement and its pseudo-label, both in the
    /// transformed frame. `None` when refinement failed.
    pub pseudo_target: Option<(Quad, PseudoLabel)>,
    pub weights: LossWeights,
    pub step: u64,
}

impl StepObjective {
    pub fn evaluate(&self, student_params: &[f64]) -> Result<LossBreakdown> {
        let student = apply_transform_quads(&self.transform, &decode_slice(student_params));
        let sup = self.gt.as_ref().map_or(0.0, |gt| supervised_loss(&student, gt));
        let cons = if student.is_empty() {
            0.0
        } else {
            consistency_loss(&self.teacher, &student)?
        };
        let pseudo = match (&self.pseudo_target, student.is_empty()) {
            (Some((target, refined)), false) => pseudo_label_loss(target, refined, &student)?,
            _ => 0.0,
        };
        Ok(total_loss(sup, cons, pseudo, &self.weights, self.step))
    }

    pub fn total(&self, student_params: &[f64]) -> f64 {
        self.evaluate(student_params).map_or(f64::NAN, |b| b.total)
    }
}

/// Outcome of one [`train_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: MeanTeacherState,
    /// Losses at the pre-update student.
    pub losses: LossBreakdown,
    pub transform: Transform,
    pub refined: Option<PseudoLabel>,
}

/// Builds the frozen objective for one scene and step.
///
/// The teacher path sees a farthest-point subsample drawn with its own child
/// seed. Quads do not consume points, so the student path's subsample never
/// needs to be materialized. A target at least as large as the cloud keeps
/// the whole cloud, since subsampling everything only reorders it.
pub fn build_objective(
    state: &MeanTeacherState,
    scene: &TrainScene,
    config: &TrainConfig,
    step: u64,
    seed: u64,
) -> Result<StepObjective> {
    if !scene.cloud.has_normals() {
        return Err(Error::NormalsRequired);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transform = sample_transform(&config.transform, rng.next_u64());
    let (_student_seed, teacher_seed) = child_seeds(rng.next_u64());
    let refine_seed = rng.next_u64();

    let m = config.transform.fps_target.min(scene.cloud.len());
    let teacher_cloud = if m >= scene.cloud.len() {
        scene.cloud.clone()
    } else if config.transform.downsample {
        farthest_point_sampling(&scene.cloud, m, teacher_seed)?
    } else {
        farthest_point_sampling(&scene.cloud, m, FIXED_SUBSAMPLE_SEED)?
    };

    let teacher = apply_transform_quads(&transform, &state.teacher.decode());
    let gt = scene.gt.as_ref().map(|g| apply_transform_quads(&transform, g));

    let pseudo_target = if teacher.is_empty() {
        None
    } else {
        let target = teacher[select_refine_target(&teacher)?];
        let cloud = apply_transform_cloud(&transform, &teacher_cloud);
        gmf_refine(&target, &cloud, &config.refine, refine_seed)
            .ok()
            .map(|r| (target, r.refined))
    };

    Ok(StepObjective {
        transform,
        teacher,
        gt,
        pseudo_target,
        weights: config.weights,
        step,
    })
}

/// One mean-teacher update: gradient step on the student, then EMA.
pub fn train_step(
    state: &MeanTeacherState,
    scene: &TrainScene,
    config: &TrainConfig,
    step: u64,
    seed: u64,
) -> Result<StepOutput> {
    let objective = build_objective(state, scene, config, step, seed)?;
    let losses = objective.evaluate(&state.student.0)?;
    if !losses.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("{losses:?}"),
        });
    }
    let grad = finite_diff_grad(|p| objective.total(p), &state.student, config.ema.fd_epsilon).map_err(|e| match e {
        Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { step, detail },
        other => other,
    })?;
    let mut student = ParamVector(
        state
            .student
            .0
            .iter()
            .zip(&grad.0)
            .map(|(p, g)| p - config.ema.lr * g)
            .collect(),
    );
    student.project();
    let teacher = ema_update(&state.teacher, &student, config.ema.decay)?;
    Ok(StepOutput {
        state: MeanTeacherState { student, teacher },
        losses,
        transform: objective.transform,
        refined: objective.pseudo_target.map(|(_, r)| r),
    })
}

/// One line of the demo loss log: batch means of each term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub supervised: f64,
    pub consistency: f64,
    pub pseudo_label: f64,
    pub effective_lambda_qmt: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoScene {
    pub cloud: PointCloud,
    pub gt: Vec<Quad>,
    pub labeled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutcome {
    pub log: Vec<LossRecord>,
    pub initial_report: EvalReport,
    pub final_report: EvalReport,
}

/// Builds the demo dataset: rooms with random footprints plus noisy initial
/// predictions (perturbed walls and a few spurious quads).
pub fn demo_dataset(config: &RunConfig, seed: u64) -> Result<(Vec<DemoScene>, Vec<Vec<Quad>>)> {
    let demo = &config.demo;
    demo.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = demo.labeled_scenes + demo.unlabeled_scenes;
    let mut scenes = Vec::with_capacity(total);
    let mut init = Vec::with_capacity(total);
    for i in 0..total {
        let spec = SceneSpec {
            footprint: random_footprint(&mut rng),
            ..demo.scene.clone()
        };
        let scene = generate_scene(&spec, rng.next_u64())?;
        let gt = scene.walls().to_vec();

        let [q_lo, q_hi] = demo.init_quadness;
        let quadness = |rng: &mut ChaCha8Rng| if q_lo == q_hi { q_lo } else { rng.random_range(q_lo..=q_hi) };
        let mut preds: Vec<Quad> = gt
            .iter()
            .map(|q| {
                let mut p = perturb_quad(q, &demo.init_perturb, rng.next_u64());
                p.quadness = quadness(&mut rng);
                p
            })
            .collect();
        let h = spec.wall_height;
        let (lo, hi) = footprint_bounds(&spec.footprint);
        for _ in 0..demo.spurious_per_scene {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            preds.push(Quad {
                center: [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1]), h / 2.0].into(),
                normal: Vec3::new(angle.cos(), angle.sin(), 0.0),
                half_size: Vec2::new(rng.random_range(0.5..2.0), rng.random_range(0.5..1.5)),
                quadness: quadness(&mut rng),
            });
        }
        scenes.push(DemoScene {
            cloud: scene.cloud,
            gt,
            labeled: i < demo.labeled_scenes,
        });
        init.push(preds);
    }
    Ok((scenes, init))
}

fn footprint_bounds(poly: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    poly.iter().fold(
        ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]),
        |(lo, hi), v| ([lo[0].min(v[0]), lo[1].min(v[1])], [hi[0].max(v[0]), hi[1].max(v[1])]),
    )
}

fn report(states: &[MeanTeacherState], scenes: &[DemoScene], th: &MatchThresholds) -> EvalReport {
    let reports: Vec<EvalReport> = states
        .iter()
        .zip(scenes)
        .map(|(s, sc)| prf1(&s.teacher.decode(), &sc.gt, th))
        .collect();
    EvalReport::aggregate(&reports)
}

/// Runs the mean-teacher demo.
///
/// Each step's batch holds every labeled scene plus as many unlabeled scenes,
/// taken round-robin. Every scene's teacher gets one EMA update per step;
/// scenes outside the batch keep their student. Reports cover the teacher
/// quads of all scenes against synthetic ground truth.
pub fn run_demo(config: &RunConfig, seed: u64) -> Result<DemoOutcome> {
    config.validate()?;
    let (scenes, init) = demo_dataset(config, seed)?;
    let labeled: Vec<usize> = (0..scenes.len()).filter(|&i| scenes[i].labeled).collect();
    let unlabeled: Vec<usize> = (0..scenes.len()).filter(|&i| !scenes[i].labeled).collect();
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::EmptyDataset("need labeled and unlabeled scenes".into()));
    }
    let train_scenes: Vec<TrainScene> = scenes
        .iter()
        .map(|s| TrainScene {
            cloud: s.cloud.clone(),
            gt: s.labeled.then(|| s.gt.clone()),
        })
        .collect();
    let train = TrainConfig::from_run_config(config);
    let mut states: Vec<MeanTeacherState> = init.iter().map(|q| MeanTeacherState::from_quads(q)).collect();

    let initial_report = report(&states, &scenes, &config.eval);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let per_batch = labeled.len();
    let mut cursor = 0;
    let mut log = Vec::with_capacity(config.ema.steps as usize);

    for step in 0..config.ema.steps {
        let mut batch = labeled.clone();
        for _ in 0..per_batch {
            batch.push(unlabeled[cursor % unlabeled.len()]);
            cursor += 1;
        }
        batch.sort_unstable();
        batch.dedup();

        let (mut sup, mut cons, mut pseudo) = (0.0, 0.0, 0.0);
        let mut in_batch = vec![false; scenes.len()];
        for &i in &batch {
            let out = train_step(&states[i], &train_scenes[i], &train, step, seeds.next_u64())?;
            sup += out.losses.supervised;
            cons += out.losses.consistency;
            pseudo += out.losses.pseudo_label;
            states[i] = out.state;
            in_batch[i] = true;
        }
        for (i, s) in states.iter_mut().enumerate() {
            if !in_batch[i] {
                s.teacher = ema_update(&s.teacher, &s.student, train.ema.decay)?;
            }
        }
        let n = batch.len() as f64;
        let b = total_loss(sup / n, cons / n, pseudo / n, &train.weights, step);
        log.push(LossRecord {
            step,
            supervised: b.supervised,
            consistency: b.consistency,
            pseudo_label: b.pseudo_label,
            effective_lambda_qmt: b.effective_lambda_qmt,
            total: b.total,
        });
    }

    Ok(DemoOutcome {
        log,
        initial_report,
        final_report: report(&states, &scenes, &config.eval),
    })
}
