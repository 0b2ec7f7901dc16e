//! PLY point clouds and 3DGS-style Gaussian PLY files.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::splats::{sigmoid, GaussianSplat, SplatFrame};

/// Zeroth-order spherical-harmonics constant.
pub const SH_C0: f64 = 0.28209479177387814;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
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
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

impl Element {
    fn scalar_names(&self) -> Vec<&str> {
        self.props
            .iter()
            .filter_map(|p| match p {
                Property::Scalar { name, .. } => Some(name.as_str()),
                Property::List { .. } => None,
            })
            .collect()
    }
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    comments: Vec<String>,
    body_offset: usize,
    body_line: usize,
}

/// Header-level description of a PLY file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlySummary {
    pub format: &'static str,
    /// `(name, count, property names)`; list properties appear as `list`.
    pub elements: Vec<(String, usize, Vec<String>)>,
    pub comments: Vec<String>,
}

pub fn ply_summary(bytes: &[u8]) -> Result<PlySummary> {
    let h = parse_header(bytes)?;
    Ok(PlySummary {
        format: match h.format {
            Format::Ascii => "ascii",
            Format::BinaryLe => "binary_little_endian",
        },
        elements: h
            .elements
            .iter()
            .map(|e| {
                let props = e
                    .props
                    .iter()
                    .map(|p| match p {
                        Property::Scalar { name, .. } => name.clone(),
                        Property::List { .. } => "list".to_string(),
                    })
                    .collect();
                (e.name.clone(), e.count, props)
            })
            .collect(),
        comments: h.comments,
    })
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let next_line = |pos: &mut usize| -> Option<String> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| *pos + i);
        let line = String::from_utf8_lossy(&bytes[*pos..end]).trim_end_matches('\r').to_string();
        *pos = (end + 1).min(bytes.len());
        Some(line)
    };
    let perr = |line: usize, msg: String| Error::Parse { line, msg };

    line_no += 1;
    if next_line(&mut pos).as_deref().map(str::trim) != Some("ply") {
        return Err(perr(1, "missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut comments = Vec::new();
    loop {
        line_no += 1;
        let Some(line) = next_line(&mut pos) else {
            return Err(perr(line_no, "header ended without end_header".into()));
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            None => continue,
            Some("end_header") => break,
            Some("comment") | Some("obj_info") => {
                comments.push(line.trim_start()[toks[0].len()..].trim().to_string());
            }
            Some("format") => {
                format = Some(match toks.get(1).copied() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    other => return Err(perr(line_no, format!("unsupported format {other:?}"))),
                });
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(perr(line_no, "element needs a name and a count".into()));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| perr(line_no, format!("bad element count {:?}", toks[2])))?;
                elements.push(Element {
                    name: toks[1].to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| perr(line_no, "property before any element".into()))?;
                let ty = |s: &str| Scalar::parse(s).ok_or_else(|| perr(line_no, format!("unknown property type {s:?}")));
                if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return Err(perr(line_no, "list property needs count type, item type and name".into()));
                    }
                    el.props.push(Property::List {
                        count: ty(toks[2])?,
                        item: ty(toks[3])?,
                    });
                } else {
                    if toks.len() != 3 {
                        return Err(perr(line_no, "property needs a type and a name".into()));
                    }
                    el.props.push(Property::Scalar {
                        name: toks[2].to_string(),
                        ty: ty(toks[1])?,
                    });
                }
            }
            Some(other) => return Err(perr(line_no, format!("unexpected header keyword {other:?}"))),
        }
    }
    let format = format.ok_or_else(|| perr(line_no, "header has no format line".into()))?;
    Ok(Header {
        format,
        elements,
        comments,
        body_offset: pos,
        body_line: line_no + 1,
    })
}

/// Scalar property values of every item of the named element. The whole
/// body is walked so truncation anywhere is reported.
fn read_element(bytes: &[u8], header: &Header, wanted: &str) -> Result<Option<Vec<Vec<f64>>>> {
    match header.format {
        Format::BinaryLe => {
            let mut pos = header.body_offset;
            let mut found = None;
            let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
                if *pos + n > bytes.len() {
                    return Err(Error::malformed("ply body", *pos as u64, "unexpected end of data"));
                }
                let s = &bytes[*pos..*pos + n];
                *pos += n;
                Ok(s)
            };
            for el in &header.elements {
                let keep = el.name == wanted;
                let mut rows = Vec::with_capacity(if keep { el.count.min(1 << 24) } else { 0 });
                for _ in 0..el.count {
                    let mut row = Vec::new();
                    for p in &el.props {
                        match p {
                            Property::Scalar { ty, .. } => {
                                let v = ty.read_le(take(&mut pos, ty.size())?);
                                if keep {
                                    row.push(v);
                                }
                            }
                            Property::List { count, item } => {
                                let at = pos;
                                let n = count.read_le(take(&mut pos, count.size())?);
                                if !(n >= 0.0) {
                                    return Err(Error::malformed("ply body", at as u64, "negative list length"));
                                }
                                take(&mut pos, n as usize * item.size())?;
                            }
                        }
                    }
                    if keep {
                        rows.push(row);
                    }
                }
                if keep {
                    found = Some(rows);
                }
            }
            Ok(found)
        }
        Format::Ascii => {
            let text = String::from_utf8_lossy(&bytes[header.body_offset..]);
            let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
            let mut found = None;
            for el in &header.elements {
                let keep = el.name == wanted;
                let mut rows = Vec::new();
                for _ in 0..el.count {
                    let Some((i, line)) = lines.next() else {
                        return Err(Error::Parse {
                            line: header.body_line,
                            msg: format!("element {} ends early", el.name),
                        });
                    };
                    let line_no = header.body_line + i;
                    let mut toks = line.split_whitespace();
                    let mut num = || -> Result<f64> {
                        let t = toks.next().ok_or_else(|| Error::Parse {
                            line: line_no,
                            msg: "too few values".into(),
                        })?;
                        t.parse().map_err(|_| Error::Parse {
                            line: line_no,
                            msg: format!("bad number {t:?}"),
                        })
                    };
                    let mut row = Vec::new();
                    for p in &el.props {
                        match p {
                            Property::Scalar { .. } => row.push(num()?),
                            Property::List { .. } => {
                                let n = num()?;
                                for _ in 0..n as usize {
                                    num()?;
                                }
                            }
                        }
                    }
                    if keep {
                        rows.push(row);
                    }
                }
                if keep {
                    found = Some(rows);
                }
            }
            Ok(found)
        }
    }
}

fn vertex_table(bytes: &[u8]) -> Result<(Header, Element, Vec<Vec<f64>>)> {
    let header = parse_header(bytes)?;
    let el = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .cloned()
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "no vertex element".into(),
        })?;
    let rows = read_element(bytes, &header, "vertex")?.unwrap_or_default();
    Ok((header, el, rows))
}

fn column(el: &Element, name: &str) -> Option<usize> {
    el.scalar_names().iter().position(|n| *n == name)
}

fn require(el: &Element, name: &str) -> Result<usize> {
    column(el, name).ok_or_else(|| Error::Parse {
        line: 1,
        msg: format!("vertex element has no '{name}' property"),
    })
}

fn header_text(n: usize, comment: Option<&str>, props: &[(&str, &str)]) -> String {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    if let Some(c) = comment {
        h.push_str(&format!("comment source_camera {c}\n"));
    }
    h.push_str(&format!("element vertex {n}\n"));
    for (ty, name) in props {
        h.push_str(&format!("property {ty} {name}\n"));
    }
    h.push_str("end_header\n");
    h
}

fn camera_comment(id: &str) -> Option<&str> {
    (!id.is_empty() && !id.contains(['\n', '\r'])).then_some(id)
}

fn color_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Binary PLY with `x y z` floats, `red green blue` bytes and, when the
/// cloud has normals, `nx ny nz` floats (zero for missing normals).
pub fn write_ply_pointcloud(cloud: &PointCloud) -> Vec<u8> {
    let mut props = vec![("float", "x"), ("float", "y"), ("float", "z"), ("uchar", "red"), ("uchar", "green"), ("uchar", "blue")];
    if cloud.normals.is_some() {
        props.extend([("float", "nx"), ("float", "ny"), ("float", "nz")]);
    }
    let mut out = header_text(cloud.len(), camera_comment(&cloud.source_camera), &props).into_bytes();
    for i in 0..cloud.len() {
        for v in cloud.positions[i].iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend(cloud.colors[i].map(color_byte));
        if let Some(normals) = &cloud.normals {
            let n = normals[i].unwrap_or_else(Vector3::zeros);
            for v in n.iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    out
}

fn source_from_comments(comments: &[String]) -> String {
    comments
        .iter()
        .find_map(|c| c.strip_prefix("source_camera ").map(|s| s.trim().to_string()))
        .unwrap_or_default()
}

/// Reads ascii or binary little-endian PLY. Integer colors are scaled by
/// 1/255, float colors taken as is; missing colors default to white.
pub fn read_ply_pointcloud(bytes: &[u8]) -> Result<PointCloud> {
    let (header, el, rows) = vertex_table(bytes)?;
    let (x, y, z) = (require(&el, "x")?, require(&el, "y")?, require(&el, "z")?);
    let color_cols = ["red", "green", "blue"].map(|n| column(&el, n));
    let color_scale = el
        .props
        .iter()
        .find_map(|p| match p {
            Property::Scalar { name, ty } if name == "red" => Some(if matches!(ty, Scalar::F32 | Scalar::F64) { 1.0 } else { 255.0 }),
            _ => None,
        })
        .unwrap_or(255.0);
    let normal_cols = ["nx", "ny", "nz"].map(|n| column(&el, n));
    let has_normals = normal_cols.iter().all(Option::is_some);
    let mut positions = Vec::with_capacity(rows.len());
    let mut colors = Vec::with_capacity(rows.len());
    let mut normals = Vec::new();
    for r in &rows {
        positions.push(Vector3::new(r[x], r[y], r[z]));
        colors.push(color_cols.map(|c| c.map_or(1.0, |i| (r[i] / color_scale).clamp(0.0, 1.0))));
        if has_normals {
            let n = Vector3::new(r[normal_cols[0].unwrap()], r[normal_cols[1].unwrap()], r[normal_cols[2].unwrap()]);
            normals.push((n != Vector3::zeros()).then_some(n));
        }
    }
    let mut cloud = PointCloud::new(positions, colors, source_from_comments(&header.comments))?;
    if has_normals {
        cloud.normals = Some(normals);
    }
    Ok(cloud)
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    (p / (1.0 - p)).ln()
}

const GAUSSIAN_PROPS: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
];

/// 3DGS-convention PLY: DC color coefficients, logit opacity, log scales
/// and a `w x y z` rotation.
pub fn write_ply_gaussian(frame: &SplatFrame) -> Vec<u8> {
    let props: Vec<(&str, &str)> = GAUSSIAN_PROPS.iter().map(|n| ("float", *n)).collect();
    let mut out = header_text(frame.splats.len(), camera_comment(&frame.source_camera), &props).into_bytes();
    for s in &frame.splats {
        let q = s.rot.quaternion();
        let vals = [
            s.mu.x,
            s.mu.y,
            s.mu.z,
            (s.color[0] - 0.5) / SH_C0,
            (s.color[1] - 0.5) / SH_C0,
            (s.color[2] - 0.5) / SH_C0,
            logit(s.opacity),
            s.scales.x.ln(),
            s.scales.y.ln(),
            s.scales.z.ln(),
            q.w,
            q.i,
            q.j,
            q.k,
        ];
        for v in vals {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_ply_gaussian(bytes: &[u8]) -> Result<SplatFrame> {
    let (header, el, rows) = vertex_table(bytes)?;
    let cols: Vec<usize> = GAUSSIAN_PROPS.iter().map(|n| require(&el, n)).collect::<Result<_>>()?;
    let mut splats = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let v: Vec<f64> = cols.iter().map(|&c| r[c]).collect();
        let q = Quaternion::new(v[10], v[11], v[12], v[13]);
        if !(q.norm() > 0.0) {
            return Err(Error::InvalidInput(format!("gaussian {i} has a zero rotation")));
        }
        // stored unit quaternions are kept as is so files round trip exactly
        let rot = if (q.norm() - 1.0).abs() <= 1e-6 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        let color = [v[3], v[4], v[5]].map(|f| (0.5 + SH_C0 * f).clamp(0.0, 1.0));
        splats.push(GaussianSplat::new(
            Vector3::new(v[0], v[1], v[2]),
            rot,
            Vector3::new(v[7].exp(), v[8].exp(), v[9].exp()),
            color,
            sigmoid(v[6]),
        )?);
    }
    Ok(SplatFrame {
        splats,
        source_camera: source_from_comments(&header.comments),
        frame_index: 0,
    })
}
