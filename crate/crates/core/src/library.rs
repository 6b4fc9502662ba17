//! Scheme catalog and the on-disk scheme text format.
//!
//! File format (line-oriented, `#` starts a comment, blank lines ignored):
//!
//! ```text
//! m k n R
//! U 1
//! <m rows of k coefficients>
//! ...
//! U R
//! V 1
//! <k rows of n coefficients>
//! ...
//! W 1
//! <m rows of n coefficients>
//! ...
//! W R
//! ```
//!
//! Coefficients are integers in {-1, 0, 1}; product indices in headers are
//! 1-based. Parse errors carry the 1-based line number; loading also runs the
//! full bilinear-identity check so a file that parses but computes the wrong
//! product is rejected with its first failing index tuple.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scheme::{compose, standard_scheme, CoeffTensor, LcmaScheme};

const LADERMAN_TEXT: &str = include_str!("../data/laderman-3x3x3-r23.scheme");

/// Where a catalog entry came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Builtin,
    File(PathBuf),
}

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub scheme: LcmaScheme,
    pub provenance: Provenance,
}

/// Validated schemes, addressable by unique name.
#[derive(Debug, Default)]
pub struct SchemeCatalog {
    entries: BTreeMap<String, CatalogEntry>,
}

impl SchemeCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a scheme under its own name after a full validity check.
    /// Re-registering a name replaces the entry.
    pub fn register(&mut self, scheme: LcmaScheme, provenance: Provenance) -> Result<()> {
        scheme.ensure_valid()?;
        self.entries.insert(scheme.name().to_string(), CatalogEntry { scheme, provenance });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&LcmaScheme> {
        self.entries.get(name).map(|e| &e.scheme)
    }

    pub fn entry(&self, name: &str) -> Option<&CatalogEntry> {
        self.entries.get(name)
    }

    /// Entries in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &CatalogEntry)> {
        self.entries.iter().map(|(name, entry)| (name.as_str(), entry))
    }

    pub fn schemes(&self) -> impl Iterator<Item = &LcmaScheme> {
        self.entries.values().map(|e| &e.scheme)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Strassen's rank-7 scheme for a 2x2 block grid, with the literature's
/// product order M1..M7 (e.g. M1 = (A11+A22)(B11+B22), C11 = M1+M4-M5+M7).
pub fn strassen_scheme() -> LcmaScheme {
    // Rows are [x11, x12, x21, x22] per product.
    const U: [[i8; 4]; 7] = [
        [1, 0, 0, 1],
        [0, 0, 1, 1],
        [1, 0, 0, 0],
        [0, 0, 0, 1],
        [1, 1, 0, 0],
        [-1, 0, 1, 0],
        [0, 1, 0, -1],
    ];
    const V: [[i8; 4]; 7] = [
        [1, 0, 0, 1],
        [1, 0, 0, 0],
        [0, 1, 0, -1],
        [-1, 0, 1, 0],
        [0, 0, 0, 1],
        [1, 1, 0, 0],
        [0, 0, 1, 1],
    ];
    const W: [[i8; 4]; 7] = [
        [1, 0, 0, 1],
        [0, 0, 1, -1],
        [0, 1, 0, 1],
        [1, 0, 1, 0],
        [-1, 1, 0, 0],
        [0, 0, 0, 1],
        [1, 0, 0, 0],
    ];
    let flat = |rows: &[[i8; 4]; 7]| rows.iter().flatten().copied().collect::<Vec<_>>();
    let u = CoeffTensor::new("U", 7, 2, 2, flat(&U)).expect("coefficients are in range");
    let v = CoeffTensor::new("V", 7, 2, 2, flat(&V)).expect("coefficients are in range");
    let w = CoeffTensor::new("W", 7, 2, 2, flat(&W)).expect("coefficients are in range");
    LcmaScheme::new("strassen-2x2x2-r7", 2, 2, 2, 7, u, v, w).expect("shapes match")
}

/// The bundled catalog: the classical 2x2x2 scheme, Strassen, Laderman's
/// rank-23 3x3x3 scheme (from the bundled data file), and Strassen composed
/// with itself for a 4x4 grid at rank 49. Every entry is re-validated here.
pub fn builtin_catalog() -> Result<SchemeCatalog> {
    let mut catalog = SchemeCatalog::new();
    catalog.register(standard_scheme(2, 2, 2), Provenance::Builtin)?;
    let strassen = strassen_scheme();
    let squared = compose(&strassen, &strassen)?.with_name("strassen2-4x4x4-r49");
    catalog.register(squared, Provenance::Builtin)?;
    let laderman = parse_scheme(LADERMAN_TEXT, "laderman-3x3x3-r23")?;
    catalog.register(laderman, Provenance::Builtin)?;
    catalog.register(strassen, Provenance::Builtin)?;
    Ok(catalog)
}

struct LineReader<'a> {
    source_name: &'a str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str, source_name: &'a str) -> Self {
        Self { source_name, lines: text.lines().enumerate() }
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse { source_name: self.source_name.to_string(), line, message: message.into() }
    }

    /// Next line with content, as (1-based number, comment-stripped text).
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (idx, raw) in self.lines.by_ref() {
            let body = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let body = body.trim();
            if !body.is_empty() {
                return Some((idx + 1, body));
            }
        }
        None
    }
}

fn parse_fields<T: std::str::FromStr>(line: &str) -> std::result::Result<Vec<T>, String> {
    line.split_whitespace()
        .map(|tok| tok.parse::<T>().map_err(|_| format!("`{tok}` is not a valid value")))
        .collect()
}

/// Parses a scheme from text (see the module docs for the format) and runs
/// the full identity check before returning it.
pub fn parse_scheme(text: &str, name: &str) -> Result<LcmaScheme> {
    let mut reader = LineReader::new(text, name);

    let (line_no, header) = reader
        .next_content()
        .ok_or_else(|| reader.err(0, "empty scheme file; expected `m k n R` header"))?;
    let dims: Vec<usize> =
        parse_fields(header).map_err(|msg| reader.err(line_no, format!("bad header: {msg}")))?;
    let [m, k, n, rank] = dims[..] else {
        return Err(reader.err(line_no, format!("header must be `m k n R`, found {} fields", dims.len())));
    };
    if m == 0 || k == 0 || n == 0 || rank == 0 {
        return Err(reader.err(line_no, "header values must be positive"));
    }

    let mut read_tensor = |letter: &str, rows: usize, cols: usize| -> Result<CoeffTensor> {
        let mut entries: Vec<i8> = Vec::with_capacity(rank * rows * cols);
        for r in 1..=rank {
            let (line_no, header) = reader
                .next_content()
                .ok_or_else(|| reader.err(0, format!("unexpected end of file; expected `{letter} {r}`")))?;
            let fields: Vec<&str> = header.split_whitespace().collect();
            if fields != [letter, &r.to_string()[..]] {
                return Err(reader.err(line_no, format!("expected section header `{letter} {r}`, found `{header}`")));
            }
            for row in 0..rows {
                let (line_no, text) = reader.next_content().ok_or_else(|| {
                    reader.err(0, format!("unexpected end of file in `{letter} {r}` row {}", row + 1))
                })?;
                let values: Vec<i64> = parse_fields(text)
                    .map_err(|msg| reader.err(line_no, format!("bad coefficient row: {msg}")))?;
                if values.len() != cols {
                    return Err(reader.err(
                        line_no,
                        format!("`{letter} {r}` row {} has {} values, expected {cols}", row + 1, values.len()),
                    ));
                }
                for (col, &v) in values.iter().enumerate() {
                    if !(-1..=1).contains(&v) {
                        return Err(reader.err(
                            line_no,
                            format!("coefficient {v} at `{letter} {r}` row {} col {} is outside {{-1, 0, 1}}", row + 1, col + 1),
                        ));
                    }
                    entries.push(v as i8);
                }
            }
        }
        // Static letter name for the error type; values were range-checked above.
        let tensor_name = match letter {
            "U" => "U",
            "V" => "V",
            _ => "W",
        };
        CoeffTensor::new(tensor_name, rank, rows, cols, entries)
    };

    let u = read_tensor("U", m, k)?;
    let v = read_tensor("V", k, n)?;
    let w = read_tensor("W", m, n)?;
    if let Some((line_no, text)) = reader.next_content() {
        return Err(reader.err(line_no, format!("trailing content after W {rank}: `{text}`")));
    }

    let scheme = LcmaScheme::new(name, m, k, n, rank, u, v, w)?;
    scheme.ensure_valid()?;
    Ok(scheme)
}

/// Loads and validates a scheme file; the entry is named `name`.
pub fn load_scheme(path: &Path, name: &str) -> Result<LcmaScheme> {
    let text = std::fs::read_to_string(path)?;
    let source = path.display().to_string();
    // Parse under the path so errors point at the file, then rename.
    let scheme = parse_scheme(&text, &source)?;
    Ok(scheme.with_name(name))
}

/// Writes a scheme in the text format `parse_scheme` reads.
pub fn save_scheme(scheme: &LcmaScheme, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "# {}", scheme.name())?;
    writeln!(out, "{} {} {} {}", scheme.m(), scheme.k(), scheme.n(), scheme.rank())?;
    let mut write_tensor = |letter: &str, t: &CoeffTensor| -> std::io::Result<()> {
        let (rank, rows, cols) = t.dims();
        for r in 0..rank {
            writeln!(out, "{} {}", letter, r + 1)?;
            for row in 0..rows {
                let line: Vec<String> = (0..cols).map(|c| t.get(r, row, c).to_string()).collect();
                writeln!(out, "{}", line.join(" "))?;
            }
        }
        Ok(())
    };
    write_tensor("U", scheme.u())?;
    write_tensor("V", scheme.v())?;
    write_tensor("W", scheme.w())
}

/// One row of the catalog listing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchemeSummary {
    pub name: String,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub rank: usize,
    pub nnz_u: usize,
    pub nnz_v: usize,
    pub nnz_w: usize,
}

/// Catalog contents in deterministic (lexicographic name) order.
pub fn list_schemes(catalog: &SchemeCatalog) -> Vec<SchemeSummary> {
    catalog
        .schemes()
        .map(|s| SchemeSummary {
            name: s.name().to_string(),
            m: s.m(),
            k: s.k(),
            n: s.n(),
            rank: s.rank(),
            nnz_u: s.u().nnz(),
            nnz_v: s.v().nnz(),
            nnz_w: s.w().nnz(),
        })
        .collect()
}
