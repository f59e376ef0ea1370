//! Binary little-endian PLY in the common 3DGS export layout.
//!
//! Vertex properties: `x y z`, `opacity` (logit), `scale_0..2` (log-scale), `rot_0..3`
//! (quaternion, w first), `f_dc_0..2`, optional `f_rest_*` stored channel-major, and an
//! optional `object` flag marking the object of interest.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};

use super::{Gaussian3D, SplatError, SplatScene};

#[derive(Debug, Clone, Copy, PartialEq)]
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

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
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

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.props.iter().map(|(_, s)| s.size()).sum()
    }
}

fn header_err(line: usize, msg: impl Into<String>) -> SplatError {
    SplatError::Header { line, msg: msg.into() }
}

struct Header {
    elements: Vec<Element>,
    object_name: Option<String>,
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, SplatError> {
    const END: &[u8] = b"end_header\n";
    let end = bytes.windows(END.len()).position(|w| w == END).ok_or_else(|| header_err(0, "no end_header"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| header_err(0, "header is not utf-8"))?;
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    let mut object_name = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["ply"] if line == 1 => {}
            _ if line == 1 => return Err(header_err(line, "missing `ply` magic")),
            ["format", "binary_little_endian", _] => saw_format = true,
            ["format", other, ..] => return Err(header_err(line, format!("unsupported format `{other}`"))),
            ["comment", "object", name] => object_name = Some(name.to_string()),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count.parse().map_err(|_| header_err(line, format!("bad element count `{count}`")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            ["property", "list", ..] => return Err(header_err(line, "list properties are not supported")),
            ["property", ty, name] => {
                let scalar = Scalar::parse(ty).ok_or_else(|| header_err(line, format!("unknown type `{ty}`")))?;
                elements.last_mut().ok_or_else(|| header_err(line, "property before any element"))?.props.push((name.to_string(), scalar));
            }
            _ => return Err(header_err(line, format!("unrecognized line `{raw}`"))),
        }
    }
    if !saw_format {
        return Err(header_err(0, "missing format line"));
    }
    Ok(Header { elements, object_name, payload_start: end + END.len() })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parses an in-memory PLY file.
pub fn read_splat_ply(bytes: &[u8]) -> Result<SplatScene, SplatError> {
    let header = parse_header(bytes)?;
    let mut offset = header.payload_start;
    let mut vertex = None;
    for el in &header.elements {
        if el.name == "vertex" {
            vertex = Some((el, offset));
            break;
        }
        offset += el.count * el.stride();
    }
    let (el, start) = vertex.ok_or_else(|| SplatError::MissingProperty("element vertex".into()))?;

    let index: HashMap<&str, (usize, Scalar)> = {
        let mut off = 0;
        el.props
            .iter()
            .map(|(n, s)| {
                let e = (n.as_str(), (off, *s));
                off += s.size();
                e
            })
            .collect()
    };
    let need = |name: &str| index.get(name).copied().ok_or_else(|| SplatError::MissingProperty(name.to_string()));
    let pos = [need("x")?, need("y")?, need("z")?];
    let opacity = need("opacity")?;
    let scale = [need("scale_0")?, need("scale_1")?, need("scale_2")?];
    let rot = [need("rot_0")?, need("rot_1")?, need("rot_2")?, need("rot_3")?];
    let dc = [need("f_dc_0")?, need("f_dc_1")?, need("f_dc_2")?];
    let n_rest = (0..).take_while(|i| index.contains_key(format!("f_rest_{i}").as_str())).count();
    let per_channel = match n_rest {
        0 | 9 | 24 | 45 => n_rest / 3,
        n => return Err(SplatError::MissingProperty(format!("f_rest_{n} (got {n} rest coefficients, expected 0, 9, 24 or 45)"))),
    };
    let rest: Vec<(usize, Scalar)> = (0..n_rest).map(|i| index[format!("f_rest_{i}").as_str()]).collect();
    let object = index.get("object").copied();

    let stride = el.stride();
    let needed = start + el.count * stride;
    if bytes.len() < needed {
        return Err(SplatError::Record {
            record: (bytes.len().saturating_sub(start)) / stride.max(1),
            msg: format!("file truncated: need {needed} bytes, have {}", bytes.len()),
        });
    }

    let mut gaussians = Vec::with_capacity(el.count);
    let mut labels = Vec::with_capacity(el.count);
    for r in 0..el.count {
        let rec = &bytes[start + r * stride..start + (r + 1) * stride];
        let get = |(off, s): (usize, Scalar)| s.read(&rec[off..]);
        let bad = |msg: &str| SplatError::Record { record: r, msg: msg.to_string() };

        let mean = Vector3::new(get(pos[0]), get(pos[1]), get(pos[2]));
        let raw_opacity = get(opacity);
        let log_scale = Vector3::new(get(scale[0]), get(scale[1]), get(scale[2]));
        let q = Quaternion::new(get(rot[0]), get(rot[1]), get(rot[2]), get(rot[3]));
        let mut sh = vec![[get(dc[0]), get(dc[1]), get(dc[2])]];
        for j in 0..per_channel {
            sh.push([get(rest[j]), get(rest[per_channel + j]), get(rest[2 * per_channel + j])]);
        }
        let finite = mean.iter().chain(log_scale.iter()).chain(q.coords.iter()).all(|v| v.is_finite())
            && raw_opacity.is_finite()
            && sh.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(bad("non-finite value"));
        }
        if q.norm() < 1e-12 {
            return Err(bad("zero quaternion"));
        }
        let g = Gaussian3D::from_scale_rotation(mean, log_scale.map(f64::exp), &UnitQuaternion::from_quaternion(q), sigmoid(raw_opacity), sh)
            .map_err(|e| bad(&e.to_string()))?;
        gaussians.push(g);
        labels.push(object.is_some_and(|o| get(o) != 0.0));
    }

    let scene = SplatScene::new(gaussians);
    if labels.iter().any(|l| *l) {
        scene.with_object(header.object_name.as_deref().unwrap_or("object"), labels)
    } else {
        Ok(scene)
    }
}

pub fn load_splat_file(path: &Path) -> Result<SplatScene, SplatError> {
    read_splat_ply(&std::fs::read(path)?)
}

fn decompose(cov: &Matrix3<f64>) -> (Vector3<f64>, UnitQuaternion<f64>) {
    let eig = SymmetricEigen::new(*cov);
    let mut vecs = eig.eigenvectors;
    if vecs.determinant() < 0.0 {
        vecs.column_mut(2).neg_mut();
    }
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(vecs));
    (eig.eigenvalues.map(|v| v.max(0.0).sqrt()), rot)
}

/// Serializes a scene; output bytes are a pure function of the scene.
pub fn write_splat_ply<W: Write>(scene: &SplatScene, mut out: W) -> Result<(), SplatError> {
    let degree_rest = scene.gaussians().iter().map(|g| g.sh.len() - 1).max().unwrap_or(0);
    let labels = scene.labels();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    if let Some(obj) = scene.object() {
        header += &format!("comment object {}\n", obj.name.replace(char::is_whitespace, "_"));
    }
    header += &format!("element vertex {}\n", scene.len());
    for p in ["x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "f_dc_0", "f_dc_1", "f_dc_2"] {
        header += &format!("property float {p}\n");
    }
    for i in 0..degree_rest * 3 {
        header += &format!("property float f_rest_{i}\n");
    }
    if labels.is_some() {
        header += "property uchar object\n";
    }
    header += "end_header\n";
    out.write_all(header.as_bytes())?;

    let mut buf = Vec::new();
    for (i, g) in scene.gaussians().iter().enumerate() {
        buf.clear();
        let (scale, rot) = decompose(g.covariance());
        let o = g.opacity.clamp(1e-7, 1.0 - 1e-7);
        let logit = (o / (1.0 - o)).ln();
        let mut push = |v: f64| buf.extend_from_slice(&(v as f32).to_le_bytes());
        push(g.mean.x);
        push(g.mean.y);
        push(g.mean.z);
        push(logit);
        for s in scale.iter() {
            push(s.max(1e-12).ln());
        }
        push(rot.w);
        push(rot.i);
        push(rot.j);
        push(rot.k);
        for c in 0..3 {
            push(g.sh[0][c]);
        }
        for c in 0..3 {
            for j in 1..=degree_rest {
                push(g.sh.get(j).map_or(0.0, |v| v[c]));
            }
        }
        if let Some(l) = labels {
            buf.push(l[i] as u8);
        }
        out.write_all(&buf)?;
    }
    Ok(())
}
