//! Top-down SVG layout plots.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Quad};

pub const MAX_PLOT_POINTS: usize = 5000;
const WIDTH: f64 = 800.0;
const MARGIN: f64 = 20.0;

/// Renders points (seeded subsample of at most [`MAX_PLOT_POINTS`]),
/// predicted quads in blue and optional ground truth in dashed green.
pub fn render_svg(cloud: &PointCloud, quads: &[Quad], gt: &[Quad], seed: u64) -> String {
    let mut idx: Vec<usize> = if cloud.len() > MAX_PLOT_POINTS {
        sample(&mut ChaCha8Rng::seed_from_u64(seed), cloud.len(), MAX_PLOT_POINTS).into_vec()
    } else {
        (0..cloud.len()).collect()
    };
    idx.sort_unstable();

    let outlines = |qs: &[Quad]| -> Vec<Vec<(f64, f64)>> {
        qs.iter().map(|q| q.corners().iter().map(|c| (c.x, c.y)).collect()).collect()
    };
    let (pred, truth) = (outlines(quads), outlines(gt));

    let xy = idx
        .iter()
        .map(|&i| (cloud.points()[i].x, cloud.points()[i].y))
        .chain(pred.iter().chain(&truth).flatten().copied());
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for (x, y) in xy {
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    }
    if !lo.0.is_finite() {
        lo = (-1.0, -1.0);
        hi = (1.0, 1.0);
    }
    let span = (hi.0 - lo.0).max(hi.1 - lo.1).max(1e-6);
    let k = (WIDTH - 2.0 * MARGIN) / span;
    let height = (hi.1 - lo.1) * k + 2.0 * MARGIN;
    let map = |(x, y): (f64, f64)| (MARGIN + (x - lo.0) * k, height - MARGIN - (y - lo.1) * k);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r##"<g fill="#888888">"##);
    for &i in &idx {
        let p = cloud.points()[i];
        let (x, y) = map((p.x, p.y));
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1"/>"#);
    }
    let _ = writeln!(s, "</g>");
    let polys = |s: &mut String, outlines: &[Vec<(f64, f64)>], style: &str| {
        for o in outlines {
            let pts: Vec<String> = o
                .iter()
                .map(|&c| {
                    let (x, y) = map(c);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(s, r#"<polygon points="{}" fill="none" {style}/>"#, pts.join(" "));
        }
    };
    polys(&mut s, &truth, r##"stroke="#2a9d3a" stroke-width="3" stroke-dasharray="8 4""##);
    polys(&mut s, &pred, r##"stroke="#1f5fd0" stroke-width="2""##);
    s.push_str("</svg>\n");
    s
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
