//! Quad and point-cloud types together with the per-quad and point-to-quad
//! geometry used throughout the crate.
//!
//! A quad is a rectangular layout element `{center, normal, half_size, quadness}`.
//! Its in-plane frame is spanned by a horizontal axis `x = n × z / |n × z|` and
//! the world vertical `z = (0, 0, 1)`; `half_size = (w, h)` holds the
//! half-extents along those two axes.

use nalgebra::{Matrix3, SymmetricEigen, Vector2};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Tolerance on `|n| = 1` for stored normals.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Below this `|n × z|` a quad is treated as horizontal.
const HORIZONTAL_EPS: f64 = 1e-6;

pub const UP: Vec3 = Vec3::new(0.0, 0.0, 1.0);

/// A point with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedPoint {
    pub position: Point3,
    pub normal: Vec3,
}

/// An ordered set of points with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidCloud(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Point3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::InvalidCloud(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        if let Some(i) = normals
            .iter()
            .position(|n| (n.norm() - 1.0).abs() > UNIT_TOLERANCE)
        {
            return Err(Error::InvalidCloud(format!("normal {i} is not unit length")));
        }
        let mut cloud = Self::new(points)?;
        cloud.normals = Some(normals);
        Ok(cloud)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point `i` with its normal, if normals are present.
    pub fn oriented(&self, i: usize) -> Option<OrientedPoint> {
        let normal = *self.normals.as_ref()?.get(i)?;
        Some(OrientedPoint {
            position: self.points[i],
            normal,
        })
    }

    /// A new cloud holding the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| indices.iter().map(|&i| ns[i]).collect()),
        }
    }

    /// Concatenates `other` onto `self`. Normals survive only if both carry them.
    pub fn extend(&mut self, other: PointCloud) {
        self.normals = match (self.normals.take(), other.normals) {
            (Some(mut a), Some(b)) => {
                a.extend(b);
                Some(a)
            }
            (None, Some(b)) if self.points.is_empty() => Some(b),
            _ => None,
        };
        self.points.extend(other.points);
    }

    pub(crate) fn from_parts_unchecked(points: Vec<Point3>, normals: Option<Vec<Vec3>>) -> Self {
        Self { points, normals }
    }

    pub fn into_parts(self) -> (Vec<Point3>, Option<Vec<Vec3>>) {
        (self.points, self.normals)
    }
}

/// A layout quad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub center: Point3,
    pub normal: Vec3,
    /// Half-extents `(w, h)` along the horizontal and vertical quad axes.
    pub half_size: Vec2,
    pub quadness: f64,
}

impl Quad {
    /// Builds a quad, normalizing `normal`. Rejects zero or non-finite
    /// normals, negative half-sizes and quadness outside `[0, 1]`.
    pub fn new(center: Point3, normal: Vec3, half_size: Vec2, quadness: f64) -> Result<Self> {
        let len = normal.norm();
        if !len.is_finite() || len < 1e-12 {
            return Err(Error::InvalidQuad(format!("normal {normal:?} cannot be normalized")));
        }
        let quad = Quad {
            center,
            normal: normal / len,
            half_size,
            quadness,
        };
        quad.validate()?;
        Ok(quad)
    }

    /// A ground-truth quad, quadness fixed to 1.
    pub fn ground_truth(center: Point3, normal: Vec3, half_size: Vec2) -> Result<Self> {
        Self::new(center, normal, half_size, 1.0)
    }

    /// Builds a quad from full extents (width, height) instead of half-extents.
    pub fn from_full_size(center: Point3, normal: Vec3, full_size: Vec2, quadness: f64) -> Result<Self> {
        Self::new(center, normal, full_size * 0.5, quadness)
    }

    pub fn full_size(&self) -> Vec2 {
        self.half_size * 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidQuad("center is not finite".into()));
        }
        if (self.normal.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidQuad(format!(
                "normal has length {}",
                self.normal.norm()
            )));
        }
        if !(self.half_size.x >= 0.0 && self.half_size.y >= 0.0)
            || !self.half_size.iter().all(|s| s.is_finite())
        {
            return Err(Error::InvalidQuad(format!(
                "half size {:?} must be finite and nonnegative",
                self.half_size
            )));
        }
        if !(0.0..=1.0).contains(&self.quadness) {
            return Err(Error::InvalidQuad(format!(
                "quadness {} outside [0, 1]",
                self.quadness
            )));
        }
        Ok(())
    }

    pub fn axes(&self) -> QuadAxes {
        quad_axes(self)
    }

    pub fn corners(&self) -> [Point3; 4] {
        quad_corners(self)
    }

    pub fn with_quadness(mut self, quadness: f64) -> Result<Self> {
        self.quadness = quadness;
        self.validate()?;
        Ok(self)
    }
}

/// A re-estimated quad used as a pseudo-label. Quadness is always exactly 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoLabel(Quad);

impl PseudoLabel {
    pub fn new(quad: Quad) -> Result<Self> {
        quad.validate()?;
        if quad.quadness != 1.0 {
            return Err(Error::InvalidQuad(format!(
                "pseudo-label quadness must be 1.0, got {}",
                quad.quadness
            )));
        }
        Ok(Self(quad))
    }

    pub fn quad(&self) -> &Quad {
        &self.0
    }

    pub fn into_quad(self) -> Quad {
        self.0
    }
}

/// In-plane frame of a quad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadAxes {
    /// Horizontal edge direction.
    pub x_axis: Vec3,
    /// Vertical edge direction; the world up vector for non-horizontal quads.
    pub z_axis: Vec3,
}

/// Horizontal and vertical edge directions of a quad.
///
/// Horizontal quads (normal parallel to the world vertical) fall back to
/// `x = (1, 0, 0)` and `z = n × x`, so the second axis stays in the quad plane.
pub fn quad_axes(q: &Quad) -> QuadAxes {
    let cross = q.normal.cross(&UP);
    let len = cross.norm();
    if len < HORIZONTAL_EPS {
        let x_axis = Vec3::new(1.0, 0.0, 0.0);
        let z_axis = q.normal.cross(&x_axis).normalize();
        return QuadAxes { x_axis, z_axis };
    }
    QuadAxes {
        x_axis: cross / len,
        z_axis: UP,
    }
}

/// The four corners, counter-clockwise when viewed from the `+normal` side.
pub fn quad_corners(q: &Quad) -> [Point3; 4] {
    let QuadAxes { x_axis, z_axis } = quad_axes(q);
    let dx = x_axis * q.half_size.x;
    let dz = z_axis * q.half_size.y;
    // z × x = n for vertical quads, so walking +z then +x turns counter-clockwise.
    [
        q.center - dx - dz,
        q.center - dx + dz,
        q.center + dx + dz,
        q.center + dx - dz,
    ]
}

/// `|c1 - c2|_2 + |1 - n1·n2| + |s1 - s2|_2^2`. Quadness does not enter.
///
/// The normal term is evaluated as `|n1 - n2|^2 / 2`, equal for unit normals
/// and exactly zero for identical ones.
pub fn quad_distance(a: &Quad, b: &Quad) -> f64 {
    let center = (a.center - b.center).norm();
    let normal = 0.5 * (a.normal - b.normal).norm_squared();
    let size = (a.half_size - b.half_size).norm_squared();
    center + normal + size
}

/// The three parts of the hybrid point-to-quad metric and their sum.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MetricBreakdown {
    pub perpendicular: f64,
    pub orientation: f64,
    pub out_of_quad: f64,
    pub total: f64,
}

/// Hybrid point-to-quad metric.
///
/// The point normal is flipped onto the quad normal's hemisphere first, since
/// estimated normals carry no orientation.
pub fn point_quad_metrics(p: &OrientedPoint, q: &Quad) -> MetricBreakdown {
    let offset = p.position - q.center;
    let perpendicular = offset.dot(&q.normal).abs();

    let mut n_p = p.normal;
    if n_p.dot(&q.normal) < 0.0 {
        n_p = -n_p;
    }
    let orientation = 0.5 * (n_p - q.normal).norm_squared();

    let axes = quad_axes(q);
    let w_p = offset.dot(&axes.x_axis).abs();
    let h_p = offset.dot(&axes.z_axis).abs();
    let out_of_quad = (w_p - q.half_size.x).max(0.0) + (h_p - q.half_size.y).max(0.0);

    MetricBreakdown {
        perpendicular,
        orientation,
        out_of_quad,
        total: perpendicular + orientation + out_of_quad,
    }
}

/// Per-point normals from PCA over the `k` nearest neighbors (the point
/// itself included). The normal is the least-variance eigenvector; its sign is
/// whatever the eigensolver returns.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::InvalidParameter(format!(
            "neighborhood size must be at least 3, got {k}"
        )));
    }
    if cloud.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k,
            got: cloud.len(),
        });
    }
    let index = NeighborIndex::build(cloud.points(), k);
    let mut normals = Vec::with_capacity(cloud.len());
    let mut scratch = Vec::new();
    for (i, p) in cloud.points().iter().enumerate() {
        index.k_nearest_into(p, k, &mut scratch);
        normals.push(pca_normal(cloud.points(), &scratch).ok_or_else(|| {
            Error::InvalidCloud(format!("could not fit a normal at point {i}"))
        })?);
    }
    Ok(PointCloud::from_parts_unchecked(
        cloud.points().to_vec(),
        Some(normals),
    ))
}

fn pca_normal(points: &[Point3], neighbors: &[usize]) -> Option<Vec3> {
    let n = neighbors.len() as f64;
    let mean = neighbors
        .iter()
        .fold(Vec3::zeros(), |acc, &i| acc + points[i].coords)
        / n;
    let mut cov = Matrix3::zeros();
    for &i in neighbors {
        let d = points[i].coords - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eigen = SymmetricEigen::new(cov);
    let (min_idx, _) = eigen
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let v: Vec3 = eigen.eigenvectors.column(min_idx).into_owned();
    let len = v.norm();
    (len > 0.0 && len.is_finite()).then(|| v / len)
}

/// Exact k-nearest-neighbor search over a uniform grid.
///
/// Neighbors are ordered by `(squared distance, index)`, which makes the result
/// identical to a brute-force scan with the same ordering.
pub struct NeighborIndex<'a> {
    points: &'a [Point3],
    origin: Point3,
    cell: f64,
    dims: [usize; 3],
    cells: Vec<Vec<usize>>,
}

impl<'a> NeighborIndex<'a> {
    const MAX_CELLS_PER_AXIS: usize = 128;

    pub fn build(points: &'a [Point3], k: usize) -> Self {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            lo = Point3::origin();
            hi = Point3::origin();
        }
        let extent = hi - lo;
        // Clouds are mostly surfaces, so size cells as if points covered a 2D area.
        let density_ratio = (k.max(1) as f64 / points.len().max(1) as f64).sqrt();
        let mut cell = (extent.norm() * density_ratio).max(1e-9);
        let max_extent = extent.max();
        if max_extent / cell > Self::MAX_CELLS_PER_AXIS as f64 {
            cell = max_extent / Self::MAX_CELLS_PER_AXIS as f64;
        }
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as usize + 1).max(1));
        let mut cells = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut index = NeighborIndex {
            points,
            origin: lo,
            cell,
            dims,
            cells: Vec::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let c = index.cell_of(p);
            cells[index.flat(c)].push(i);
        }
        index.cells = cells;
        index
    }

    fn cell_of(&self, p: &Point3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let f = ((p[a] - self.origin[a]) / self.cell).floor();
            (f.max(0.0) as usize).min(self.dims[a] - 1)
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Fills `out` with the indices of the `k` nearest points to `query`.
    pub fn k_nearest_into(&self, query: &Point3, k: usize, out: &mut Vec<usize>) {
        out.clear();
        let k = k.min(self.points.len());
        if k == 0 {
            return;
        }
        let center = self.cell_of(query);
        let max_ring = *self.dims.iter().max().unwrap();
        let mut candidates: Vec<(f64, usize)> = Vec::new();
        for ring in 0..=max_ring {
            self.visit_shell(center, ring, |i| {
                candidates.push(((self.points[i] - query).norm_squared(), i));
            });
            if candidates.len() >= k {
                let bound = ring as f64 * self.cell;
                candidates.select_nth_unstable_by(k - 1, |a, b| order(*a, *b));
                if candidates[k - 1].0 < bound * bound {
                    break;
                }
            }
        }
        candidates.sort_unstable_by(|a, b| order(*a, *b));
        out.extend(candidates.iter().take(k).map(|&(_, i)| i));
    }

    fn visit_shell(&self, center: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as isize;
        let range = |a: usize| {
            let c = center[a] as isize;
            (c - r).max(0)..=(c + r).min(self.dims[a] as isize - 1)
        };
        for z in range(2) {
            for y in range(1) {
                for x in range(0) {
                    let dz = (z - center[2] as isize).abs();
                    let dy = (y - center[1] as isize).abs();
                    let dx = (x - center[0] as isize).abs();
                    if dx.max(dy).max(dz) != r {
                        continue;
                    }
                    let idx = self.flat([x as usize, y as usize, z as usize]);
                    for &i in &self.cells[idx] {
                        f(i);
                    }
                }
            }
        }
    }
}

fn order(a: (f64, usize), b: (f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}
