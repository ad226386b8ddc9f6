//! Synthetic rooms: an extruded footprint polygon sampled into a point cloud,
//! with one ground-truth quad per wall.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Quad, Vec2, Vec3, UP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    /// Counter-clockwise footprint vertices in the horizontal plane, meters.
    pub footprint: Vec<[f64; 2]>,
    pub wall_height: f64,
    /// Surface samples per square meter.
    pub point_density: f64,
    /// Standard deviation of isotropic Gaussian position noise, meters.
    pub noise_sigma: f64,
    /// Fraction of all points that are uniform clutter inside the room volume.
    pub clutter_fraction: f64,
    /// Fraction of each wall's area cut out as one rectangular hole.
    pub dropout_fraction: f64,
    pub include_floor_ceiling: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            footprint: rectangle(4.0, 3.0),
            wall_height: 2.5,
            point_density: 500.0,
            noise_sigma: 0.0,
            clutter_fraction: 0.0,
            dropout_fraction: 0.0,
            include_floor_ceiling: false,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        if !(self.wall_height > 0.0 && self.wall_height.is_finite()) {
            return bad(format!("wall_height {} must be positive", self.wall_height));
        }
        if !(self.point_density > 0.0 && self.point_density.is_finite()) {
            return bad(format!("point_density {} must be positive", self.point_density));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        for (name, f) in [("clutter_fraction", self.clutter_fraction), ("dropout_fraction", self.dropout_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("{name} {f} outside [0, 1)"));
            }
        }
        validate_polygon(&self.footprint)
    }
}

/// Axis-aligned `w × d` rectangle centered on the origin.
pub fn rectangle(w: f64, d: f64) -> Vec<[f64; 2]> {
    centered(vec![[0.0, 0.0], [w, 0.0], [w, d], [0.0, d]])
}

/// `w × d` rectangle with an `nw × nd` notch cut from one corner (six walls).
pub fn l_shape(w: f64, d: f64, nw: f64, nd: f64) -> Vec<[f64; 2]> {
    centered(vec![
        [0.0, 0.0],
        [w, 0.0],
        [w, d - nd],
        [w - nw, d - nd],
        [w - nw, d],
        [0.0, d],
    ])
}

/// `w × d` rectangle with a `gw × gd` notch cut from the middle of one side
/// (eight walls).
pub fn u_shape(w: f64, d: f64, gw: f64, gd: f64) -> Vec<[f64; 2]> {
    let a = (w - gw) / 2.0;
    centered(vec![
        [0.0, 0.0],
        [w, 0.0],
        [w, d],
        [w - a, d],
        [w - a, d - gd],
        [a, d - gd],
        [a, d],
        [0.0, d],
    ])
}

fn centered(mut poly: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    let (lo, hi) = bounds(&poly);
    let c = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    for v in &mut poly {
        v[0] -= c[0];
        v[1] -= c[1];
    }
    poly
}

/// A random rectangle, L or U footprint with 4, 6 or 8 walls.
pub fn random_footprint(rng: &mut impl Rng) -> Vec<[f64; 2]> {
    let w = rng.random_range(3.5..7.0);
    let d = rng.random_range(3.0..6.0);
    match rng.random_range(0..3) {
        0 => rectangle(w, d),
        1 => l_shape(w, d, w * rng.random_range(0.3..0.6), d * rng.random_range(0.3..0.6)),
        _ => u_shape(w, d, w * rng.random_range(0.25..0.45), d * rng.random_range(0.3..0.5)),
    }
}

fn bounds(poly: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for v in poly {
        for a in 0..2 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    (lo, hi)
}

fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        / 2.0
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross2(q1, q2, p1);
    let d2 = cross2(q1, q2, p2);
    let d3 = cross2(p1, p2, q1);
    let d4 = cross2(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |o: [f64; 2], a: [f64; 2], p: [f64; 2], d: f64| {
        d == 0.0
            && p[0] >= o[0].min(a[0])
            && p[0] <= o[0].max(a[0])
            && p[1] >= o[1].min(a[1])
            && p[1] <= o[1].max(a[1])
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

fn validate_polygon(poly: &[[f64; 2]]) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidScene(format!("footprint: {m}")));
    let n = poly.len();
    if n < 3 {
        return bad(format!("{n} vertices, need at least 3"));
    }
    if poly.iter().flatten().any(|c| !c.is_finite()) {
        return bad("non-finite vertex".into());
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt() < 1e-9 {
            return bad(format!("edge {i} has zero length"));
        }
    }
    if signed_area(poly) <= 1e-12 {
        return bad("vertices must be counter-clockwise with positive area".into());
    }
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return bad(format!("edges {i} and {j} intersect"));
            }
        }
    }
    Ok(())
}

fn inside(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let n = poly.len();
    let mut odd = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0] {
            odd = !odd;
        }
        j = i;
    }
    odd
}

/// Where a generated point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointSource {
    /// Index into the scene's quads.
    Face(usize),
    Clutter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub quads: Vec<Quad>,
    pub sources: Vec<PointSource>,
    /// Number of leading quads that are walls; floor and ceiling follow.
    pub wall_count: usize,
}

impl Scene {
    pub fn walls(&self) -> &[Quad] {
        &self.quads[..self.wall_count]
    }
}

/// Samples a scene. Wall quads come first in footprint edge order, then the
/// floor and ceiling when requested. Normals point into the room.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidScene(e.to_string()))?;
    let h = spec.wall_height;
    let poly = &spec.footprint;
    let n = poly.len();

    let mut quads = Vec::new();
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut sources = Vec::new();
    let jitter = |rng: &mut ChaCha8Rng, p: Point3| {
        if spec.noise_sigma > 0.0 {
            p + Vec3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
        } else {
            p
        }
    };

    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dy * dy).sqrt();
        let dir = Vec3::new(dx / len, dy / len, 0.0);
        let normal = Vec3::new(-dir.y, dir.x, 0.0);
        let origin = Point3::new(a[0], a[1], 0.0);
        let face = quads.len();
        quads.push(Quad {
            center: Point3::new((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, h / 2.0),
            normal,
            half_size: Vec2::new(len / 2.0, h / 2.0),
            quadness: 1.0,
        });

        let count = (spec.point_density * len * h * (1.0 - spec.dropout_fraction)).round() as usize;
        let hole = (spec.dropout_fraction > 0.0).then(|| {
            let fw = rng.random_range(spec.dropout_fraction..=1.0);
            let fh = spec.dropout_fraction / fw;
            let u0 = rng.random_range(0.0..=(1.0 - fw)) * len;
            let v0 = rng.random_range(0.0..=(1.0 - fh)) * h;
            (u0, u0 + fw * len, v0, v0 + fh * h)
        });
        let mut placed = 0;
        while placed < count {
            let u = rng.random_range(0.0..len);
            let v = rng.random_range(0.0..h);
            if let Some((u0, u1, v0, v1)) = hole {
                if u >= u0 && u < u1 && v >= v0 && v < v1 {
                    continue;
                }
            }
            points.push(jitter(&mut rng, origin + dir * u + UP * v));
            normals.push(normal);
            sources.push(PointSource::Face(face));
            placed += 1;
        }
    }
    let wall_count = quads.len();

    let (lo, hi) = bounds(poly);
    if spec.include_floor_ceiling {
        let area = signed_area(poly);
        let half = Vec2::new((hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0);
        let (cx, cy) = ((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0);
        for (z, normal) in [(0.0, UP), (h, -UP)] {
            let face = quads.len();
            quads.push(Quad {
                center: Point3::new(cx, cy, z),
                normal,
                half_size: half,
                quadness: 1.0,
            });
            let count = (spec.point_density * area).round() as usize;
            let mut placed = 0;
            while placed < count {
                let x = rng.random_range(lo[0]..hi[0]);
                let y = rng.random_range(lo[1]..hi[1]);
                if !inside(poly, x, y) {
                    continue;
                }
                points.push(jitter(&mut rng, Point3::new(x, y, z)));
                normals.push(normal);
                sources.push(PointSource::Face(face));
                placed += 1;
            }
        }
    }

    if spec.clutter_fraction > 0.0 {
        let surface = points.len() as f64;
        let count = (surface * spec.clutter_fraction / (1.0 - spec.clutter_fraction)).round() as usize;
        let mut placed = 0;
        while placed < count {
            let x = rng.random_range(lo[0]..hi[0]);
            let y = rng.random_range(lo[1]..hi[1]);
            if !inside(poly, x, y) {
                continue;
            }
            let z = rng.random_range(0.0..h);
            let n: [f64; 3] = UnitSphere.sample(&mut rng);
            points.push(Point3::new(x, y, z));
            normals.push(Vec3::from(n).normalize());
            sources.push(PointSource::Clutter);
            placed += 1;
        }
    }

    Ok(Scene {
        cloud: PointCloud::with_normals(points, normals)?,
        quads,
        sources,
        wall_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSpec {
    /// Per-axis uniform center noise half-range, meters.
    pub center_noise: f64,
    /// Maximum normal tilt, degrees.
    pub normal_tilt_deg: f64,
    pub size_scale_range: [f64; 2],
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            center_noise: 0.15,
            normal_tilt_deg: 10.0,
            size_scale_range: [0.8, 1.2],
        }
    }
}

impl PerturbSpec {
    pub const NONE: PerturbSpec = PerturbSpec {
        center_noise: 0.0,
        normal_tilt_deg: 0.0,
        size_scale_range: [1.0, 1.0],
    };

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.size_scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("perturb: size_scale_range {:?} invalid", self.size_scale_range)));
        }
        if !(self.center_noise >= 0.0 && self.normal_tilt_deg >= 0.0) {
            return Err(Error::Config("perturb: noise amounts must be >= 0".into()));
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

/// Rotates `v` by `angle` about the unit `axis`.
fn rotate(v: &Vec3, axis: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

/// A noisy copy of `q`: shifted center, tilted normal, rescaled extents.
pub fn perturb_quad(q: &Quad, spec: &PerturbSpec, seed: u64) -> Quad {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = spec.center_noise;
    let shift = Vec3::new(uniform(&mut rng, -c, c), uniform(&mut rng, -c, c), uniform(&mut rng, -c, c));
    let tilt = uniform(&mut rng, 0.0, spec.normal_tilt_deg).to_radians();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let [lo, hi] = spec.size_scale_range;
    let sx = uniform(&mut rng, lo, hi);
    let sy = uniform(&mut rng, lo, hi);

    let normal = if tilt > 0.0 {
        let axis = Vec3::new(phi.cos(), phi.sin(), 0.0);
        rotate(&q.normal, &axis, tilt).normalize()
    } else {
        q.normal
    };
    Quad {
        center: q.center + shift,
        normal,
        half_size: Vec2::new(q.half_size.x * sx, q.half_size.y * sy),
        quadness: q.quadness,
    }
}
