// SPDX-License-Identifier: Apache-2.0

//! ASCII XYZ point files: one point per line, 2 or 3 whitespace-separated
//! reals, `#` comments and blank lines ignored. The dimension is fixed by the
//! first data line.

use std::io::Write;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// A parsed file, keeping each data line's original text.
#[derive(Debug, Clone, PartialEq)]
pub struct XyzFile {
    pub cloud: PointCloud,
    pub lines: Vec<String>,
}

impl XyzFile {
    /// Serializes points in `order`, reusing the original line text.
    pub fn render_reordered(&self, order: &[usize]) -> String {
        let mut out = String::new();
        for &i in order {
            out.push_str(&self.lines[i]);
            out.push('\n');
        }
        out
    }
}

pub fn parse_xyz(text: &str) -> Result<XyzFile> {
    let mut dims = None;
    let mut coords = Vec::new();
    let mut lines = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: k + 1, message };
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("'{tok}' is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dims {
            None if values.len() == 2 || values.len() == 3 => dims = Some(values.len()),
            None => {
                return Err(parse_err(format!(
                    "expected 2 or 3 coordinates, found {}",
                    values.len()
                )))
            }
            Some(d) if d != values.len() => {
                return Err(parse_err(format!(
                    "expected {d} coordinates, found {}",
                    values.len()
                )))
            }
            Some(_) => {}
        }
        coords.extend(values);
        lines.push(line.to_string());
    }
    let dims = dims.ok_or(Error::Parse {
        line: 0,
        message: "file contains no points".into(),
    })?;
    Ok(XyzFile {
        cloud: PointCloud::new(dims, coords)?,
        lines,
    })
}

pub fn read_xyz(path: &Path) -> Result<XyzFile> {
    let text = std::fs::read_to_string(path)?;
    parse_xyz(&text)
}

/// Renders a cloud with shortest round-trip decimal coordinates.
pub fn format_xyz(pc: &PointCloud) -> String {
    let mut out = String::new();
    for p in pc.points() {
        let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
