//! Minimal PLY reader/writer.
//!
//! Point clouds are written as binary little-endian PLY with float32
//! `x, y, z` vertex properties, the interchange format of the `capture`
//! and `detect` commands. The reader additionally accepts ASCII PLY,
//! double-precision coordinates, extra vertex properties (skipped) and a
//! face element, so user-supplied catalog meshes load too.

use crate::geometry::{Point3, TriangleMesh};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed ply: {0}")]
    Parse(String),
    #[error("unsupported ply feature: {0}")]
    Unsupported(String),
    #[error("invalid mesh: {0}")]
    Mesh(#[from] crate::geometry::GeometryError),
}

/// Writes points as binary little-endian PLY (`x`, `y`, `z` as float32).
pub fn write_point_cloud(path: &Path, points: &[Point3]) -> Result<(), PlyError> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    )?;
    for p in points {
        w.write_f32::<LittleEndian>(p.x as f32)?;
        w.write_f32::<LittleEndian>(p.y as f32)?;
        w.write_f32::<LittleEndian>(p.z as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_point_cloud(path: &Path) -> Result<Vec<Point3>, PlyError> {
    Ok(parse(path)?.vertices)
}

pub fn read_mesh(path: &Path) -> Result<TriangleMesh, PlyError> {
    let data = parse(path)?;
    if data.faces.is_empty() {
        return Err(PlyError::Parse("mesh file has no faces".into()));
    }
    Ok(TriangleMesh::new(data.vertices, data.faces)?)
}

struct PlyContents {
    vertices: Vec<Point3>,
    faces: Vec<[u32; 3]>,
}

#[derive(Clone, Copy, PartialEq)]
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
    fn from_name(s: &str) -> Option<Self> {
        Some(match s {
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

    fn read_binary(self, r: &mut impl Read) -> Result<f64, PlyError> {
        Ok(match self {
            Scalar::I8 => r.read_i8()? as f64,
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::I16 => r.read_i16::<LittleEndian>()? as f64,
            Scalar::U16 => r.read_u16::<LittleEndian>()? as f64,
            Scalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            Scalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            Scalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            Scalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

enum Property {
    Scalar { name: String, kind: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn parse(path: &Path) -> Result<PlyContents, PlyError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;

    let header_end = find_header_end(&bytes)
        .ok_or_else(|| PlyError::Parse("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| PlyError::Parse("header is not utf-8".into()))?;
    let body = &bytes[header_end..];

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(PlyError::Parse("missing ply magic".into()));
    }

    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => match tok.next() {
                Some("ascii") => binary = Some(false),
                Some("binary_little_endian") => binary = Some(true),
                Some(other) => {
                    return Err(PlyError::Unsupported(format!("format {other}")));
                }
                None => return Err(PlyError::Parse("bad format line".into())),
            },
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| PlyError::Parse("element without name".into()))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| PlyError::Parse("element without count".into()))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Parse("property before element".into()))?;
                let t1 = tok
                    .next()
                    .ok_or_else(|| PlyError::Parse("property without type".into()))?;
                if t1 == "list" {
                    let count = Scalar::from_name(tok.next().unwrap_or(""))
                        .ok_or_else(|| PlyError::Parse("bad list count type".into()))?;
                    let item = Scalar::from_name(tok.next().unwrap_or(""))
                        .ok_or_else(|| PlyError::Parse("bad list item type".into()))?;
                    let name = tok
                        .next()
                        .ok_or_else(|| PlyError::Parse("list without name".into()))?;
                    el.properties.push(Property::List {
                        name: name.to_string(),
                        count,
                        item,
                    });
                } else {
                    let kind = Scalar::from_name(t1)
                        .ok_or_else(|| PlyError::Parse(format!("bad scalar type {t1}")))?;
                    let name = tok
                        .next()
                        .ok_or_else(|| PlyError::Parse("property without name".into()))?;
                    el.properties.push(Property::Scalar {
                        name: name.to_string(),
                        kind,
                    });
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(PlyError::Parse(format!("unknown keyword {other}"))),
            None => {}
        }
    }
    let binary = binary.ok_or_else(|| PlyError::Parse("missing format line".into()))?;

    let mut vertices = Vec::new();
    let mut faces = Vec::new();

    if binary {
        let mut cursor = body;
        for el in &elements {
            read_element_binary(el, &mut cursor, &mut vertices, &mut faces)?;
        }
    } else {
        let text = std::str::from_utf8(body)
            .map_err(|_| PlyError::Parse("ascii body is not utf-8".into()))?;
        let mut tokens = text.split_whitespace();
        for el in &elements {
            read_element_ascii(el, &mut tokens, &mut vertices, &mut faces)?;
        }
    }
    Ok(PlyContents { vertices, faces })
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let needle = b"end_header";
    let pos = bytes
        .windows(needle.len())
        .position(|w| w == needle)?;
    let mut end = pos + needle.len();
    // Swallow the line terminator (\n or \r\n).
    if bytes.get(end) == Some(&b'\r') {
        end += 1;
    }
    if bytes.get(end) == Some(&b'\n') {
        end += 1;
    }
    Some(end)
}

fn push_face(indices: &[f64], faces: &mut Vec<[u32; 3]>) -> Result<(), PlyError> {
    if indices.len() < 3 {
        return Err(PlyError::Parse("face with fewer than 3 indices".into()));
    }
    // Triangle fan for quads and larger polygons.
    for i in 1..indices.len() - 1 {
        faces.push([indices[0] as u32, indices[i] as u32, indices[i + 1] as u32]);
    }
    Ok(())
}

fn read_element_binary(
    el: &Element,
    cursor: &mut &[u8],
    vertices: &mut Vec<Point3>,
    faces: &mut Vec<[u32; 3]>,
) -> Result<(), PlyError> {
    for _ in 0..el.count {
        let mut xyz = [f64::NAN; 3];
        let mut list_values = Vec::new();
        for prop in &el.properties {
            match prop {
                Property::Scalar { name, kind } => {
                    let v = kind.read_binary(cursor)?;
                    match name.as_str() {
                        "x" => xyz[0] = v,
                        "y" => xyz[1] = v,
                        "z" => xyz[2] = v,
                        _ => {}
                    }
                }
                Property::List { name, count, item } => {
                    let n = count.read_binary(cursor)? as usize;
                    list_values.clear();
                    for _ in 0..n {
                        list_values.push(item.read_binary(cursor)?);
                    }
                    if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                        push_face(&list_values, faces)?;
                    }
                }
            }
        }
        if el.name == "vertex" {
            if xyz.iter().any(|v| v.is_nan()) {
                return Err(PlyError::Parse("vertex missing x/y/z".into()));
            }
            vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
        }
    }
    Ok(())
}

fn read_element_ascii<'a>(
    el: &Element,
    tokens: &mut impl Iterator<Item = &'a str>,
    vertices: &mut Vec<Point3>,
    faces: &mut Vec<[u32; 3]>,
) -> Result<(), PlyError> {
    let next_f64 = |tokens: &mut dyn Iterator<Item = &'a str>| -> Result<f64, PlyError> {
        tokens
            .next()
            .and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| PlyError::Parse("truncated ascii body".into()))
    };
    for _ in 0..el.count {
        let mut xyz = [f64::NAN; 3];
        for prop in &el.properties {
            match prop {
                Property::Scalar { name, .. } => {
                    let v = next_f64(tokens)?;
                    match name.as_str() {
                        "x" => xyz[0] = v,
                        "y" => xyz[1] = v,
                        "z" => xyz[2] = v,
                        _ => {}
                    }
                }
                Property::List { name, .. } => {
                    let n = next_f64(tokens)? as usize;
                    let mut vals = Vec::with_capacity(n);
                    for _ in 0..n {
                        vals.push(next_f64(tokens)?);
                    }
                    if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                        push_face(&vals, faces)?;
                    }
                }
            }
        }
        if el.name == "vertex" {
            if xyz.iter().any(|v| v.is_nan()) {
                return Err(PlyError::Parse("vertex missing x/y/z".into()));
            }
            vertices.push(Point3::new(xyz[0], xyz[1], xyz[2]));
        }
    }
    Ok(())
}
