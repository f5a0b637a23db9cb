//! Minimal PLY reader/writer covering the vertex data this tool needs.
//!
//! Reads ascii and binary little-endian files whose vertex element stores
//! `x`, `y`, `z` as 32- or 64-bit floats; other scalar properties and
//! trailing elements (faces, etc.) are skipped. Big-endian files are
//! rejected explicitly rather than misread.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

use super::{io_error, malformed, unsupported};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
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
}

#[derive(Debug)]
struct Property {
    name: String,
    scalar: Scalar,
    is_list: bool,
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    /// Byte offset where the data section begins.
    data_start: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let bad = |detail: &str| malformed(path, "PLY", detail);

    // The header is ASCII text terminated by an "end_header" line.
    let mut pos = 0;
    let mut lines: Vec<(usize, String)> = Vec::new(); // (offset past line, text)
    let mut found_end = false;
    while pos < bytes.len() {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or_else(|| bad("missing end_header"))?;
        let raw = &bytes[pos..nl];
        let text = std::str::from_utf8(raw)
            .map_err(|_| bad("header is not valid UTF-8"))?
            .trim_end_matches('\r')
            .to_string();
        pos = nl + 1;
        let is_end = text.trim() == "end_header";
        lines.push((pos, text));
        if is_end {
            found_end = true;
            break;
        }
    }
    if !found_end {
        return Err(bad("missing end_header"));
    }
    let data_start = lines.last().unwrap().0;

    if lines.first().map(|(_, t)| t.trim()) != Some("ply") {
        return Err(bad("missing 'ply' magic line"));
    }

    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for (_, line) in &lines[1..lines.len() - 1] {
        let mut tok = line.split_whitespace();
        match tok.next() {
            None | Some("comment") | Some("obj_info") => continue,
            Some("format") => {
                let fmt = tok.next().ok_or_else(|| bad("format line without type"))?;
                let _version = tok.next();
                encoding = Some(match fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::BinaryLe,
                    "binary_big_endian" => {
                        return Err(unsupported(path, "big-endian binary PLY"));
                    }
                    other => return Err(bad(&format!("unknown format '{other}'"))),
                });
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| bad("element without name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad("element without a valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before any element"))?;
                let kind = tok.next().ok_or_else(|| bad("property without type"))?;
                if kind == "list" {
                    let _count_type = tok.next().ok_or_else(|| bad("list without count type"))?;
                    let value = tok.next().ok_or_else(|| bad("list without value type"))?;
                    let scalar = Scalar::parse(value)
                        .ok_or_else(|| bad(&format!("unknown property type '{value}'")))?;
                    let name = tok.next().ok_or_else(|| bad("property without name"))?;
                    element.properties.push(Property {
                        name: name.to_string(),
                        scalar,
                        is_list: true,
                    });
                } else {
                    let scalar = Scalar::parse(kind)
                        .ok_or_else(|| bad(&format!("unknown property type '{kind}'")))?;
                    let name = tok.next().ok_or_else(|| bad("property without name"))?;
                    element.properties.push(Property {
                        name: name.to_string(),
                        scalar,
                        is_list: false,
                    });
                }
            }
            Some(other) => {
                return Err(bad(&format!("unexpected header keyword '{other}'")));
            }
        }
    }

    Ok(Header {
        encoding: encoding.ok_or_else(|| bad("missing format line"))?,
        elements,
        data_start,
    })
}

/// Locate the vertex element and the property indexes of x, y, z.
fn vertex_layout(path: &Path, header: &Header) -> Result<(usize, [usize; 3])> {
    let idx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| malformed(path, "PLY", "no vertex element"))?;
    let element = &header.elements[idx];
    let mut coord = [usize::MAX; 3];
    for (p_idx, prop) in element.properties.iter().enumerate() {
        let slot = match prop.name.as_str() {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            _ => continue,
        };
        if prop.is_list {
            return Err(malformed(path, "PLY", "coordinate property is a list"));
        }
        if !matches!(prop.scalar, Scalar::F32 | Scalar::F64) {
            return Err(unsupported(
                path,
                format!("vertex property '{}' is not float or double", prop.name),
            ));
        }
        coord[slot] = p_idx;
    }
    if coord.contains(&usize::MAX) {
        return Err(malformed(path, "PLY", "vertex element lacks x, y, z"));
    }
    Ok((idx, coord))
}

pub fn read(path: &Path) -> Result<Vec<Vec3>> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    let header = parse_header(path, &bytes)?;
    let (vertex_idx, coord) = vertex_layout(path, &header)?;
    if header.elements[vertex_idx].count == 0 {
        return Err(Error::NoPoints {
            path: path.to_path_buf(),
        });
    }
    match header.encoding {
        Encoding::Ascii => read_ascii(path, &bytes, &header, vertex_idx, coord),
        Encoding::BinaryLe => read_binary_le(path, &bytes, &header, vertex_idx, coord),
    }
}

fn read_ascii(
    path: &Path,
    bytes: &[u8],
    header: &Header,
    vertex_idx: usize,
    coord: [usize; 3],
) -> Result<Vec<Vec3>> {
    let text = std::str::from_utf8(&bytes[header.data_start..])
        .map_err(|_| malformed(path, "PLY", "ascii data is not valid UTF-8"))?;
    let mut lines = text.lines();
    // One line per element row; earlier elements are skipped line-wise.
    for element in &header.elements[..vertex_idx] {
        for _ in 0..element.count {
            lines
                .next()
                .ok_or_else(|| malformed(path, "PLY", "file truncated before vertex data"))?;
        }
    }
    let element = &header.elements[vertex_idx];
    let mut points = Vec::with_capacity(element.count);
    for row in 0..element.count {
        let line = lines
            .next()
            .ok_or_else(|| malformed(path, "PLY", format!("missing vertex row {row}")))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let mut p = Vec3::zeros();
        for (slot, &p_idx) in coord.iter().enumerate() {
            let tok = tokens.get(p_idx).ok_or_else(|| {
                malformed(path, "PLY", format!("vertex row {row} has too few columns"))
            })?;
            let value: f64 = tok.parse().map_err(|_| {
                malformed(path, "PLY", format!("vertex row {row}: bad number '{tok}'"))
            })?;
            p[slot] = value;
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(malformed(
                path,
                "PLY",
                format!("vertex row {row} has a non-finite coordinate"),
            ));
        }
        points.push(p);
    }
    Ok(points)
}

fn read_binary_le(
    path: &Path,
    bytes: &[u8],
    header: &Header,
    vertex_idx: usize,
    coord: [usize; 3],
) -> Result<Vec<Vec3>> {
    let mut offset = header.data_start;

    // Skip any elements stored before the vertices. Their sizes are only
    // known for scalar properties; variable-length lists would need to be
    // decoded row by row, which nothing we produce or consume uses.
    for element in &header.elements[..vertex_idx] {
        if element.properties.iter().any(|p| p.is_list) {
            return Err(unsupported(
                path,
                format!(
                    "binary element '{}' with list properties precedes the vertices",
                    element.name
                ),
            ));
        }
        let row: usize = element.properties.iter().map(|p| p.scalar.size()).sum();
        offset += row * element.count;
    }

    let element = &header.elements[vertex_idx];
    let row_size: usize = element.properties.iter().map(|p| p.scalar.size()).sum();
    if element.properties.iter().any(|p| p.is_list) {
        return Err(unsupported(path, "vertex element with list properties"));
    }
    let needed = row_size * element.count;
    if bytes.len() < offset + needed {
        return Err(malformed(
            path,
            "PLY",
            format!(
                "binary data truncated: need {needed} bytes of vertex data, have {}",
                bytes.len().saturating_sub(offset)
            ),
        ));
    }

    // Byte offset of each coordinate within a vertex row.
    let mut prop_offsets = Vec::with_capacity(element.properties.len());
    let mut acc = 0;
    for prop in &element.properties {
        prop_offsets.push(acc);
        acc += prop.scalar.size();
    }

    let mut points = Vec::with_capacity(element.count);
    for row in 0..element.count {
        let base = offset + row * row_size;
        let mut p = Vec3::zeros();
        for (slot, &p_idx) in coord.iter().enumerate() {
            let at = base + prop_offsets[p_idx];
            let value = match element.properties[p_idx].scalar {
                Scalar::F32 => {
                    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64
                }
                Scalar::F64 => f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()),
                _ => unreachable!("vertex_layout enforces float coordinates"),
            };
            p[slot] = value;
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(malformed(
                path,
                "PLY",
                format!("vertex row {row} has a non-finite coordinate"),
            ));
        }
        points.push(p);
    }
    Ok(points)
}

pub fn write_ascii(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", points.len()));
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in points {
        // Default float formatting prints the shortest string that parses
        // back to the same f64, so round-trips are bit-exact.
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    fs::write(path, out).map_err(|e| io_error(path, e))
}

pub fn write_binary_le(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut out = Vec::with_capacity(128 + points.len() * 24);
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", points.len()).as_bytes());
    out.extend_from_slice(b"property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in points {
        out.extend_from_slice(&p.x.to_le_bytes());
        out.extend_from_slice(&p.y.to_le_bytes());
        out.extend_from_slice(&p.z.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| io_error(path, e))?;
    file.write_all(&out).map_err(|e| io_error(path, e))
}
