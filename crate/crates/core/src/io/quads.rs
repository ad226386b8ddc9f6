//! Quads as a JSON array of records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Quad, Vec2, Vec3};

/// Normals within this distance of unit length are renormalized on load.
pub const NORMAL_LOAD_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadRecord {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub half_size: [f64; 2],
    pub quadness: f64,
}

impl From<&Quad> for QuadRecord {
    fn from(q: &Quad) -> Self {
        Self {
            center: [q.center.x, q.center.y, q.center.z],
            normal: [q.normal.x, q.normal.y, q.normal.z],
            half_size: [q.half_size.x, q.half_size.y],
            quadness: q.quadness,
        }
    }
}

impl QuadRecord {
    /// Validates the record; `field` prefixes diagnostics.
    pub fn to_quad(&self, field: &str) -> Result<Quad> {
        let schema = |name: &str, reason: String| Error::Schema {
            field: format!("{field}.{name}"),
            reason,
        };
        if self.center.iter().any(|v| !v.is_finite()) {
            return Err(schema("center", "coordinates must be finite".into()));
        }
        let n = Vec3::from(self.normal);
        let len = n.norm();
        if !len.is_finite() || (len - 1.0).abs() >= NORMAL_LOAD_TOLERANCE {
            return Err(schema("normal", format!("length {len} is not unit")));
        }
        if self.half_size.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(schema("half_size", "extents must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.quadness) {
            return Err(schema("quadness", format!("{} outside [0, 1]", self.quadness)));
        }
        Quad::new(Point3::from(self.center), n / len, Vec2::from(self.half_size), self.quadness)
            .map_err(|e| schema("normal", e.to_string()))
    }
}

pub fn quads_to_json(quads: &[Quad]) -> String {
    let records: Vec<QuadRecord> = quads.iter().map(QuadRecord::from).collect();
    let mut s = serde_json::to_string_pretty(&records).expect("records serialize");
    s.push('\n');
    s
}

pub fn quads_from_json(text: &str) -> Result<Vec<Quad>> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Schema {
        field: "$".into(),
        reason: e.to_string(),
    })?;
    let serde_json::Value::Array(items) = value else {
        return Err(Error::Schema {
            field: "$".into(),
            reason: "expected an array of quads".into(),
        });
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            let field = format!("quad[{i}]");
            let record: QuadRecord = serde_json::from_value(item).map_err(|e| Error::Schema {
                field: field.clone(),
                reason: e.to_string(),
            })?;
            record.to_quad(&field)
        })
        .collect()
}

pub fn save_quads(path: &Path, quads: &[Quad]) -> Result<()> {
    std::fs::write(path, quads_to_json(quads)).map_err(|e| Error::io(path, e))
}

pub fn load_quads(path: &Path) -> Result<Vec<Quad>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    quads_from_json(&text)
}
