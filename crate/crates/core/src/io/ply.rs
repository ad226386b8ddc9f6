//! PLY point clouds: ASCII and binary little-endian, `x y z` with optional
//! `nx ny nz`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn width(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Header {
    format: PlyFormat,
    vertex_count: usize,
    /// Vertex properties in file order.
    properties: Vec<(String, Scalar)>,
    /// Byte offset of the payload.
    body: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let bad = |m: String| Error::PlyHeader(m);
    let mut pos = 0;
    let mut next_line = || -> Result<String> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header not terminated by end_header".into()))?;
        pos += end + 1;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not valid text".into()))?;
        Ok(line.trim_end_matches('\r').trim().to_string())
    };

    if next_line()? != "ply" {
        return Err(bad("missing 'ply' magic line".into()));
    }
    let mut format = None;
    let mut vertex: Option<(usize, Vec<(String, Scalar)>)> = None;
    // 0: before vertex, 1: inside vertex, 2: after vertex
    let mut stage = 0;
    loop {
        let line = next_line()?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", kind, version] => {
                if *version != "1.0" {
                    return Err(bad(format!("unsupported version {version}")));
                }
                format = Some(match *kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(bad(format!("unsupported format {other}"))),
                });
            }
            ["element", name, count] => {
                let count: usize = count.parse().map_err(|_| bad(format!("bad element count '{count}'")))?;
                if *name == "vertex" {
                    if stage != 0 {
                        return Err(Error::PlyLayout("vertex element must come first and only once".into()));
                    }
                    vertex = Some((count, Vec::new()));
                    stage = 1;
                } else if stage == 0 {
                    return Err(Error::PlyLayout(format!("element '{name}' precedes vertex")));
                } else {
                    stage = 2;
                }
            }
            ["property", "list", ..] => {
                if stage == 1 {
                    return Err(Error::PlyLayout("list properties on vertex are not supported".into()));
                }
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown property type '{ty}'")))?;
                match (stage, vertex.as_mut()) {
                    (1, Some((_, props))) => props.push((name.to_string(), ty)),
                    (0, _) => return Err(bad("property before any element".into())),
                    _ => {}
                }
            }
            ["end_header"] => break,
            _ => return Err(bad(format!("unrecognized header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| bad("missing format line".into()))?;
    let (vertex_count, properties) = vertex.ok_or_else(|| Error::PlyLayout("no vertex element".into()))?;
    Ok(Header {
        format,
        vertex_count,
        properties,
        body: pos,
    })
}

struct Columns {
    xyz: [usize; 3],
    normals: Option<[usize; 3]>,
}

fn locate(props: &[(String, Scalar)]) -> Result<Columns> {
    let find = |n: &str| props.iter().position(|(p, _)| p == n);
    let xyz = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(Error::PlyLayout("vertex needs x, y and z properties".into())),
    };
    let normals = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        (None, None, None) => None,
        _ => return Err(Error::PlyLayout("normals need all of nx, ny and nz".into())),
    };
    Ok(Columns { xyz, normals })
}

/// Parses a PLY file held in memory. Point order is preserved.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let cols = locate(&header.properties)?;
    let n = header.vertex_count;
    let width = header.properties.len();
    let mut row = vec![0.0; width];
    let mut points = Vec::with_capacity(n);
    let mut normals = cols.normals.map(|_| Vec::with_capacity(n));
    let mut push = |row: &[f64]| {
        points.push(Point3::new(row[cols.xyz[0]], row[cols.xyz[1]], row[cols.xyz[2]]));
        if let (Some(ns), Some(c)) = (normals.as_mut(), cols.normals) {
            ns.push(Vec3::new(row[c[0]], row[c[1]], row[c[2]]));
        }
    };

    let body = &bytes[header.body..];
    match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| Error::PlyLayout("ASCII payload is not text".into()))?;
            let mut lines = text.lines().filter(|l| !l.trim().is_empty());
            for i in 0..n {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::PlyTruncated(format!("expected {n} vertices, found {i}")))?;
                let mut fields = line.split_whitespace();
                for (j, slot) in row.iter_mut().enumerate() {
                    let f = fields
                        .next()
                        .ok_or_else(|| Error::PlyTruncated(format!("vertex {i} has fewer than {width} values")))?;
                    *slot = f
                        .parse()
                        .map_err(|_| Error::PlyLayout(format!("vertex {i} property {j}: bad number '{f}'")))?;
                }
                push(&row);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let stride: usize = header.properties.iter().map(|(_, t)| t.width()).sum();
            let need = stride * n;
            if body.len() < need {
                return Err(Error::PlyTruncated(format!(
                    "expected {need} payload bytes for {n} vertices, found {}",
                    body.len()
                )));
            }
            for rec in body[..need].chunks_exact(stride) {
                let mut off = 0;
                for (slot, (_, ty)) in row.iter_mut().zip(&header.properties) {
                    *slot = ty.read_le(&rec[off..]);
                    off += ty.width();
                }
                push(&row);
            }
        }
    }
    match normals {
        Some(ns) => PointCloud::with_normals(points, ns),
        None => PointCloud::new(points),
    }
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

/// Encodes a cloud with double-precision properties.
pub fn encode_ply(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let mut out = String::from("ply\n");
    out += match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    };
    out += &format!("element vertex {}\n", cloud.len());
    let names: &[&str] = if cloud.has_normals() {
        &["x", "y", "z", "nx", "ny", "nz"]
    } else {
        &["x", "y", "z"]
    };
    for n in names {
        out += &format!("property double {n}\n");
    }
    out += "end_header\n";

    let row = |i: usize| -> Vec<f64> {
        let p = cloud.points()[i];
        let mut v = vec![p.x, p.y, p.z];
        if let Some(ns) = cloud.normals() {
            v.extend_from_slice(ns[i].as_slice());
        }
        v
    };
    match format {
        PlyFormat::Ascii => {
            for i in 0..cloud.len() {
                let line: Vec<String> = row(i).iter().map(|v| format!("{v:?}")).collect();
                out += &line.join(" ");
                out.push('\n');
            }
            out.into_bytes()
        }
        PlyFormat::BinaryLittleEndian => {
            let mut bytes = out.into_bytes();
            for i in 0..cloud.len() {
                for v in row(i) {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            bytes
        }
    }
}

pub fn write_ply(path: &Path, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    std::fs::write(path, encode_ply(cloud, format)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "ply\nformat ascii 1.0\ncomment fixture\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 2 0.5\n";

    #[test]
    fn ascii_fixture_in_file_order() {
        let c = parse_ply(THREE.as_bytes()).unwrap();
        assert_eq!(c.len(), 3);
        assert!(!c.has_normals());
        assert_eq!(c.points()[2], Point3::new(0.0, 2.0, 0.5));
    }

    #[test]
    fn missing_z_is_layout_error() {
        let s = THREE.replace("property float z\n", "");
        assert!(matches!(parse_ply(s.as_bytes()), Err(Error::PlyLayout(_))));
    }

    #[test]
    fn partial_normals_are_layout_error() {
        let s = THREE.replace("property float z\n", "property float z\nproperty float nx\n");
        assert!(matches!(parse_ply(s.as_bytes()), Err(Error::PlyLayout(_))));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_ply(b"plx\n"), Err(Error::PlyHeader(_))));
        assert!(matches!(
            parse_ply(THREE.replace("ascii", "binary_big_endian").as_bytes()),
            Err(Error::PlyHeader(_))
        ));
        assert!(matches!(
            parse_ply(THREE.replace("end_header\n", "").as_bytes()),
            Err(Error::PlyHeader(_))
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let s = THREE.replace("0 2 0.5\n", "");
        assert!(matches!(parse_ply(s.as_bytes()), Err(Error::PlyTruncated(_))));
        let c = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0); 4]).unwrap();
        let mut b = encode_ply(&c, PlyFormat::BinaryLittleEndian);
        b.truncate(b.len() - 1);
        assert!(matches!(parse_ply(&b), Err(Error::PlyTruncated(_))));
    }

    #[test]
    fn trailing_elements_are_ignored() {
        let s = THREE.replace("end_header\n", "element face 0\nproperty list uchar int vertex_indices\nend_header\n");
        assert_eq!(parse_ply(s.as_bytes()).unwrap().len(), 3);
    }

    #[test]
    fn round_trips_are_exact() {
        let pts = vec![Point3::new(0.1, -2.0 / 3.0, 1e-17), Point3::new(1e300, 5.0, -0.0)];
        let ns = vec![Vec3::new(0.0, 0.6, 0.8), Vec3::new(1.0, 0.0, 0.0)];
        let c = PointCloud::with_normals(pts, ns).unwrap();
        for f in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let back = parse_ply(&encode_ply(&c, f)).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn binary_float_and_mixed_types() {
        let mut b = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty uchar red\nproperty float x\nproperty float y\nproperty double z\nend_header\n".to_vec();
        b.push(7);
        b.extend_from_slice(&1.5f32.to_le_bytes());
        b.extend_from_slice(&(-2.0f32).to_le_bytes());
        b.extend_from_slice(&0.25f64.to_le_bytes());
        let c = parse_ply(&b).unwrap();
        assert_eq!(c.points()[0], Point3::new(1.5, -2.0, 0.25));
    }
}
