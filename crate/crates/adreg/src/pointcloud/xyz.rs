//! Plain-text XYZ format: one `x y z` triple per line, `#` comments and
//! blank lines ignored, extra trailing columns tolerated.

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::geometry::Vec3;

use super::{io_error, malformed};

pub fn read(path: &Path) -> Result<Vec<Vec3>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut points = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tok = line.split_whitespace();
        let mut p = Vec3::zeros();
        for coord in 0..3 {
            let t = tok.next().ok_or_else(|| {
                malformed(
                    path,
                    "XYZ",
                    format!("line {}: expected 3 coordinates", line_no + 1),
                )
            })?;
            p[coord] = t.parse().map_err(|_| {
                malformed(path, "XYZ", format!("line {}: bad number '{t}'", line_no + 1))
            })?;
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(malformed(
                path,
                "XYZ",
                format!("line {}: non-finite coordinate", line_no + 1),
            ));
        }
        points.push(p);
    }
    Ok(points)
}

pub fn write(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut out = String::with_capacity(points.len() * 32);
    for p in points {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    fs::write(path, out).map_err(|e| io_error(path, e))
}
