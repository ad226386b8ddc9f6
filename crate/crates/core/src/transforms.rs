//! Scene transformations: farthest point sampling, horizontal flips, rotation
//! about the vertical axis and isotropic scaling.
//!
//! Layout quads are invariant to subsampling and equivariant to the other
//! three. Every transform applies its parts in the fixed order
//! flip x → flip y → rotate → scale.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Quad, Vec3};

/// A flip/rotate/scale scene transformation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transform {
    /// Radians about `+z`.
    pub rotation_angle: f64,
    pub flip_x: bool,
    pub flip_y: bool,
    pub scale: f64,
}

impl Default for Transform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        rotation_angle: 0.0,
        flip_x: false,
        flip_y: false,
        scale: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale {} must be positive", self.scale)));
        }
        if !self.rotation_angle.is_finite() {
            return Err(Error::InvalidParameter("rotation angle must be finite".into()));
        }
        Ok(())
    }

    /// Flips then rotates; no scaling.
    pub fn apply_direction(&self, v: &Vec3) -> Vec3 {
        let x = if self.flip_x { -v.x } else { v.x };
        let y = if self.flip_y { -v.y } else { v.y };
        let (s, c) = self.rotation_angle.sin_cos();
        Vec3::new(c * x - s * y, s * x + c * y, v.z)
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.apply_direction(&p.coords) * self.scale)
    }

    pub fn apply_quad(&self, q: &Quad) -> Quad {
        Quad {
            center: self.apply_point(&q.center),
            normal: self.apply_direction(&q.normal),
            half_size: q.half_size * self.scale,
            quadness: q.quadness,
        }
    }

    /// The transform undoing `self`, expressed in the same flip → rotate →
    /// scale order.
    ///
    /// `(S R(θ) F)⁻¹ = F R(-θ) S⁻¹`. A single-axis flip conjugates the rotation
    /// (`F R(-θ) = R(θ) F`) while a double flip is a half-turn and commutes.
    pub fn inverse(&self) -> Transform {
        let single_flip = self.flip_x ^ self.flip_y;
        Transform {
            rotation_angle: if single_flip {
                self.rotation_angle
            } else {
                -self.rotation_angle
            },
            flip_x: self.flip_x,
            flip_y: self.flip_y,
            scale: 1.0 / self.scale,
        }
    }
}

/// Sampling ranges for [`sample_transform`] and the downsampling target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    /// Coarse rotation angles in radians, chosen uniformly.
    pub coarse_angles: Vec<f64>,
    /// Half-width of the uniform rotation jitter, degrees.
    pub jitter_degrees: f64,
    pub flip_prob: f64,
    pub scale_range: [f64; 2],
    pub fps_target: usize,
    /// When false, both paths see the same deterministic subsample instead of
    /// differently seeded ones.
    pub downsample: bool,
}

impl Default for TransformConfig {
    fn default() -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        Self {
            coarse_angles: vec![0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2],
            jitter_degrees: 5.0,
            flip_prob: 0.5,
            scale_range: [0.85, 1.15],
            fps_target: 40_000,
            downsample: true,
        }
    }
}

impl TransformConfig {
    /// Every transformation switched off.
    pub fn disabled() -> Self {
        Self {
            coarse_angles: vec![0.0],
            jitter_degrees: 0.0,
            flip_prob: 0.0,
            scale_range: [1.0, 1.0],
            downsample: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("transform: {m}")));
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob {} outside [0, 1]", self.flip_prob));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("scale_range {:?} must satisfy 0 < lo <= hi", self.scale_range));
        }
        if !(self.jitter_degrees >= 0.0 && self.jitter_degrees.is_finite()) {
            return bad(format!("jitter_degrees {} must be >= 0", self.jitter_degrees));
        }
        if self.coarse_angles.iter().any(|a| !a.is_finite()) {
            return bad("coarse_angles must be finite".into());
        }
        if self.fps_target == 0 {
            return bad("fps_target must be positive".into());
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws a transform: coarse angle plus jitter, independent flips and a
/// uniform scale.
pub fn sample_transform(config: &TransformConfig, seed: u64) -> Transform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = if config.coarse_angles.is_empty() {
        0.0
    } else {
        config.coarse_angles[rng.random_range(0..config.coarse_angles.len())]
    };
    let jitter = uniform(&mut rng, -config.jitter_degrees, config.jitter_degrees).to_radians();
    let flip_x = rng.random_bool(config.flip_prob);
    let flip_y = rng.random_bool(config.flip_prob);
    let scale = uniform(&mut rng, config.scale_range[0], config.scale_range[1]);
    Transform {
        rotation_angle: coarse + jitter,
        flip_x,
        flip_y,
        scale,
    }
}

pub fn apply_transform_cloud(t: &Transform, cloud: &PointCloud) -> PointCloud {
    let points = cloud.points().iter().map(|p| t.apply_point(p)).collect();
    let normals = cloud
        .normals()
        .map(|ns| ns.iter().map(|n| t.apply_direction(n)).collect());
    PointCloud::from_parts_unchecked(points, normals)
}

pub fn apply_transform_quads(t: &Transform, quads: &[Quad]) -> Vec<Quad> {
    quads.iter().map(|q| t.apply_quad(q)).collect()
}

/// Two independent seeds derived from one, for the student and teacher paths.
pub fn child_seeds(seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.next_u64(), rng.next_u64())
}

/// Index of the first FPS pick for a population of `n`.
pub fn fps_first_index(n: usize, seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).random_range(0..n)
}

/// Farthest point sampling from a given first index. Ties on the max-min
/// distance go to the lowest index.
pub fn farthest_point_indices_from(points: &[Point3], m: usize, first: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::EmptySample);
    }
    if m > points.len() {
        return Err(Error::SampleLargerThanPopulation {
            requested: m,
            population: points.len(),
        });
    }
    if first >= points.len() {
        return Err(Error::InvalidParameter(format!(
            "first index {first} out of range for {} points",
            points.len()
        )));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut min_dist = vec![f64::INFINITY; points.len()];
    let mut current = first;
    loop {
        chosen.push(current);
        if chosen.len() == m {
            break;
        }
        min_dist[current] = f64::NEG_INFINITY;
        let origin = points[current];
        let mut best = usize::MAX;
        let mut best_dist = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = &mut min_dist[i];
            if *d == f64::NEG_INFINITY {
                continue;
            }
            let candidate = (p - origin).norm_squared();
            if candidate < *d {
                *d = candidate;
            }
            if *d > best_dist {
                best_dist = *d;
                best = i;
            }
        }
        current = best;
    }
    Ok(chosen)
}

/// Indices picked by seeded farthest point sampling.
pub fn farthest_point_indices(cloud: &PointCloud, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::EmptySample);
    }
    if m > cloud.len() {
        return Err(Error::SampleLargerThanPopulation {
            requested: m,
            population: cloud.len(),
        });
    }
    farthest_point_indices_from(cloud.points(), m, fps_first_index(cloud.len(), seed))
}

pub fn farthest_point_sampling(cloud: &PointCloud, m: usize, seed: u64) -> Result<PointCloud> {
    let indices = farthest_point_indices(cloud, m, seed)?;
    Ok(cloud.select(&indices))
}
