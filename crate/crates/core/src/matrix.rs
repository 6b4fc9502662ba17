//! Dense row-major matrices over the element types the executors support.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

use crate::error::{Error, Result};

/// Scalar types the kernels run on.
///
/// `Wide` is the accumulator type used when a kernel is asked for
/// wide accumulation: `f32` accumulates in `f64`, while `f64` and `i64`
/// are their own wide type. `EXACT` marks integer arithmetic, where every
/// execution order produces bit-identical results.
pub trait Element:
    Copy + Send + Sync + PartialEq + std::fmt::Debug + Default + 'static
{
    type Wide: Copy + Send + Sync + std::fmt::Debug;

    const ZERO: Self;
    const EXACT: bool;
    /// Element-mode tag used in CSV output and error messages.
    const MODE: &'static str;

    fn add(self, rhs: Self) -> Self;
    fn sub(self, rhs: Self) -> Self;
    fn mul(self, rhs: Self) -> Self;
    fn neg(self) -> Self;

    fn wide_zero() -> Self::Wide;
    fn widen(self) -> Self::Wide;
    fn narrow(wide: Self::Wide) -> Self;
    fn wide_add(a: Self::Wide, b: Self::Wide) -> Self::Wide;
    fn wide_sub(a: Self::Wide, b: Self::Wide) -> Self::Wide;
    /// widen(a) * widen(b)
    fn wide_mul(a: Self, b: Self) -> Self::Wide;

    fn to_f64(self) -> f64;
    fn parse(token: &str) -> Option<Self>;
    fn format(self) -> String;
    /// Draws one element for randomized inputs: uniform [-1, 1] for floats,
    /// uniform integers in [-8, 8] for `i64`.
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

macro_rules! float_element {
    ($t:ty, $wide:ty, $mode:literal) => {
        impl Element for $t {
            type Wide = $wide;

            const ZERO: Self = 0.0;
            const EXACT: bool = false;
            const MODE: &'static str = $mode;

            #[inline]
            fn add(self, rhs: Self) -> Self {
                self + rhs
            }
            #[inline]
            fn sub(self, rhs: Self) -> Self {
                self - rhs
            }
            #[inline]
            fn mul(self, rhs: Self) -> Self {
                self * rhs
            }
            #[inline]
            fn neg(self) -> Self {
                -self
            }

            #[inline]
            fn wide_zero() -> Self::Wide {
                0.0
            }
            #[inline]
            fn widen(self) -> Self::Wide {
                self as $wide
            }
            #[inline]
            fn narrow(wide: Self::Wide) -> Self {
                wide as $t
            }
            #[inline]
            fn wide_add(a: Self::Wide, b: Self::Wide) -> Self::Wide {
                a + b
            }
            #[inline]
            fn wide_sub(a: Self::Wide, b: Self::Wide) -> Self::Wide {
                a - b
            }
            #[inline]
            fn wide_mul(a: Self, b: Self) -> Self::Wide {
                (a as $wide) * (b as $wide)
            }

            fn to_f64(self) -> f64 {
                self as f64
            }
            fn parse(token: &str) -> Option<Self> {
                token.parse().ok()
            }
            fn format(self) -> String {
                format!("{self}")
            }
            fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random_range(-1.0..=1.0)
            }
        }
    };
}

float_element!(f32, f64, "f32");
float_element!(f64, f64, "f64");

impl Element for i64 {
    type Wide = i64;

    const ZERO: Self = 0;
    const EXACT: bool = true;
    const MODE: &'static str = "i64";

    #[inline]
    fn add(self, rhs: Self) -> Self {
        self + rhs
    }
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self - rhs
    }
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self * rhs
    }
    #[inline]
    fn neg(self) -> Self {
        -self
    }

    #[inline]
    fn wide_zero() -> Self::Wide {
        0
    }
    #[inline]
    fn widen(self) -> Self::Wide {
        self
    }
    #[inline]
    fn narrow(wide: Self::Wide) -> Self {
        wide
    }
    #[inline]
    fn wide_add(a: Self::Wide, b: Self::Wide) -> Self::Wide {
        a + b
    }
    #[inline]
    fn wide_sub(a: Self::Wide, b: Self::Wide) -> Self::Wide {
        a - b
    }
    #[inline]
    fn wide_mul(a: Self, b: Self) -> Self::Wide {
        a * b
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
    fn parse(token: &str) -> Option<Self> {
        token.parse().ok()
    }
    fn format(self) -> String {
        format!("{self}")
    }
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random_range(-8..=8)
    }
}

/// Dense row-major matrix; dimensions are always at least 1x1.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Element> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dims must be positive");
        Self { rows, cols, data: vec![T::ZERO; rows * cols] }
    }

    /// Builds from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dims must be positive");
        assert_eq!(data.len(), rows * cols, "data length must match dims");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        assert!(!rows.is_empty() && !rows[0].is_empty(), "matrix dims must be positive");
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self { rows: rows.len(), cols, data: rows.concat() }
    }

    /// Uniform random matrix from a fixed seed (ChaCha8 stream, portable
    /// across platforms and runs).
    pub fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| T::sample(&mut rng)).collect();
        Self::from_vec(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn to_f64(&self) -> Matrix<f64> {
        self.map(|v| v.to_f64())
    }

    /// Largest absolute value, as f64.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().abs()).fold(0.0, f64::max)
    }

    /// Parses the text format: a `rows cols` header line, then one line per
    /// row. `#` comments and blank lines are ignored. Errors carry 1-based
    /// line numbers under `source_name`.
    pub fn parse_text(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter_map(|(idx, raw)| {
                let body = match raw.find('#') {
                    Some(pos) => &raw[..pos],
                    None => raw,
                };
                let body = body.trim();
                (!body.is_empty()).then_some((idx + 1, body))
            });

        let (line_no, header) = lines
            .next()
            .ok_or_else(|| err(0, "empty matrix file; expected `rows cols` header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|tok| tok.parse().map_err(|_| err(line_no, format!("bad dimension `{tok}`"))))
            .collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(err(line_no, format!("header must be `rows cols`, found {} fields", dims.len())));
        };
        if rows == 0 || cols == 0 {
            return Err(err(line_no, "matrix dims must be positive".into()));
        }

        let mut data = Vec::with_capacity(rows * cols);
        for row in 0..rows {
            let (line_no, body) = lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file at row {} of {rows}", row + 1)))?;
            let mut count = 0;
            for tok in body.split_whitespace() {
                let v = T::parse(tok)
                    .ok_or_else(|| err(line_no, format!("bad {} value `{tok}`", T::MODE)))?;
                data.push(v);
                count += 1;
            }
            if count != cols {
                return Err(err(line_no, format!("row {} has {count} values, expected {cols}", row + 1)));
            }
        }
        if let Some((line_no, body)) = lines.next() {
            return Err(err(line_no, format!("trailing content after row {rows}: `{body}`")));
        }
        Ok(Self::from_vec(rows, cols, data))
    }

    /// Writes the text format `parse_text` reads.
    pub fn write_text(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.rows, self.cols)?;
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(|v| v.format()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

impl<T: Element> std::fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Matrix<{}>({}x{})", T::MODE, self.rows, self.cols)
    }
}

/// Error statistics of `approx` against a higher-precision `oracle`, with
/// every per-element error normalized by the oracle's largest magnitude:
/// `e_ij = |approx_ij - oracle_ij| / max_abs(oracle)`. Returns (max, mean).
pub fn rel_error_stats<T: Element>(approx: &Matrix<T>, oracle: &Matrix<f64>) -> (f64, f64) {
    assert_eq!((approx.rows(), approx.cols()), (oracle.rows(), oracle.cols()), "shape mismatch");
    let scale = oracle.max_abs().max(f64::MIN_POSITIVE);
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    for (a, o) in approx.data().iter().zip(oracle.data()) {
        let e = (a.to_f64() - o).abs() / scale;
        max = max.max(e);
        sum += e;
    }
    (max, sum / approx.data().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let m = Matrix::from_vec(2, 3, vec![1i64, 2, 3, 4, 5, 6]);
        assert_eq!(m.get(0, 2), 3);
        assert_eq!(m.get(1, 0), 4);
        assert_eq!(m.row(1), &[4, 5, 6]);
    }

    #[test]
    fn random_is_deterministic_per_seed_and_bounded() {
        let a = Matrix::<f32>::random(8, 8, 42);
        let b = Matrix::<f32>::random(8, 8, 42);
        let c = Matrix::<f32>::random(8, 8, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let d = Matrix::<i64>::random(8, 8, 7);
        assert!(d.data().iter().all(|v| (-8..=8).contains(v)));
    }

    #[test]
    fn text_round_trip_all_modes() {
        let m = Matrix::<i64>::random(3, 5, 1);
        let mut text = Vec::new();
        m.write_text(&mut text).unwrap();
        let back = Matrix::<i64>::parse_text(std::str::from_utf8(&text).unwrap(), "t").unwrap();
        assert_eq!(back, m);

        let f = Matrix::<f32>::random(4, 2, 9);
        let mut text = Vec::new();
        f.write_text(&mut text).unwrap();
        let back = Matrix::<f32>::parse_text(std::str::from_utf8(&text).unwrap(), "t").unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn parse_reports_locations() {
        let err = Matrix::<f32>::parse_text("2 2\n1 2\n3 oops\n", "m.txt").unwrap_err();
        match err {
            Error::Parse { source_name, line, message } => {
                assert_eq!(source_name, "m.txt");
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("wrong error: {other}"),
        }
        assert!(Matrix::<f32>::parse_text("2 2\n1 2\n", "m.txt").is_err());
        assert!(Matrix::<f32>::parse_text("0 2\n", "m.txt").is_err());
    }

    #[test]
    fn rel_error_stats_normalizes_by_oracle_peak() {
        let oracle = Matrix::<f64>::from_vec(1, 2, vec![100.0, 0.0]);
        let approx = Matrix::<f32>::from_vec(1, 2, vec![99.0, 1.0]);
        let (max, mean) = rel_error_stats(&approx, &oracle);
        assert!((max - 0.01).abs() < 1e-12);
        assert!((mean - 0.01).abs() < 1e-12);
    }
}
