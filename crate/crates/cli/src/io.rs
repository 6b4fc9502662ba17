//! Command-line text plumbing: shape and tile flag parsing, shape-list
//! files, and a small CSV emitter. Matrix file I/O delegates to the text
//! format the core crate defines (`rows cols` header, one row per line).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use lcma::matrix::{Element, Matrix};

/// Parses `MxKxN` (case-insensitive separator) into (m, k, n).
pub fn parse_shape(text: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = text.split(['x', 'X']).collect();
    if parts.len() != 3 {
        bail!("shape must look like MxKxN, got {text:?}");
    }
    let mut dims = [0usize; 3];
    for (slot, part) in dims.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .with_context(|| format!("bad shape component {part:?} in {text:?}"))?;
        if *slot == 0 {
            bail!("shape components must be positive, got {text:?}");
        }
    }
    Ok((dims[0], dims[1], dims[2]))
}

/// Parses `m,n,k` tile extents.
pub fn parse_tile(text: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        bail!("tile must look like m,n,k, got {text:?}");
    }
    let mut dims = [0usize; 3];
    for (slot, part) in dims.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .with_context(|| format!("bad tile component {part:?} in {text:?}"))?;
        if *slot == 0 {
            bail!("tile components must be positive, got {text:?}");
        }
    }
    Ok((dims[0], dims[1], dims[2]))
}

/// Reads a shape-list file: one `M K N` triple per line, `#` comments and
/// blank lines ignored. Errors carry the 1-based line number.
pub fn parse_shape_list(text: &str, source: &str) -> Result<Vec<(usize, usize, usize)>> {
    let mut shapes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            bail!("{source}:{}: expected `M K N`, got {raw:?}", idx + 1);
        }
        let mut dims = [0usize; 3];
        for (slot, field) in dims.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .with_context(|| format!("{source}:{}: bad dimension {field:?}", idx + 1))?;
            if *slot == 0 {
                bail!("{source}:{}: dimensions must be positive", idx + 1);
            }
        }
        shapes.push((dims[0], dims[1], dims[2]));
    }
    Ok(shapes)
}

/// Reads a matrix file in the element mode `T`.
pub fn read_matrix<T: Element>(path: &Path) -> Result<Matrix<T>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Matrix::parse_text(&text, &path.display().to_string())?)
}

/// Writes a matrix to `path`, or to stdout when no path is given.
pub fn emit_matrix<T: Element>(matrix: &Matrix<T>, path: Option<&Path>) -> Result<()> {
    match path {
        Some(path) => {
            let mut file = BufWriter::new(
                File::create(path).with_context(|| format!("creating {}", path.display()))?,
            );
            matrix.write_text(&mut file)?;
            file.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            matrix.write_text(&mut stdout.lock())?;
        }
    }
    Ok(())
}

/// Writes a header plus rows to `path` or stdout. Values never contain
/// commas or quotes, so no escaping is needed.
pub fn emit_csv(header: &str, rows: &[String], path: Option<&Path>) -> Result<()> {
    let mut text = String::with_capacity(rows.len() * 64 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    match path {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}
