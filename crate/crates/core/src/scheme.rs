//! Bilinear matrix-multiplication schemes and their exhaustive validation.
//!
//! A scheme `<m,k,n; R>` multiplies an m x k by a k x n block matrix with R
//! block products instead of the classical m*k*n. It is described by three
//! coefficient tensors over {-1, 0, 1}:
//!
//! * `U[r, i, l]` builds the products' left inputs from A blocks,
//! * `V[r, l, j]` builds the right inputs from B blocks,
//! * `W[r, i, j]` folds the products into C blocks.
//!
//! A scheme computes C = A*B for every operand exactly when, for all index
//! pairs, sum_r W[r,i,j] * U[r,i',l] * V[r,l',j'] equals 1 on the diagonal
//! (i=i', l=l', j=j') and 0 elsewhere. [`LcmaScheme::validate`] checks every
//! one of those m^2 k^2 n^2 equations in exact integer arithmetic.

use std::fmt;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Dense rank-major coefficient tensor with entries restricted to {-1, 0, 1}.
///
/// Indexed `(r, row, col)` where `r` is the product index and `(row, col)`
/// addresses the block grid the tensor applies to: `(m, k)` for U, `(k, n)`
/// for V, `(m, n)` for W.
#[derive(Clone, PartialEq, Eq)]
pub struct CoeffTensor {
    rank: usize,
    rows: usize,
    cols: usize,
    entries: Vec<i8>,
}

impl CoeffTensor {
    /// Builds a tensor from rank-major entries, rejecting values outside {-1, 0, 1}.
    pub fn new(name: &'static str, rank: usize, rows: usize, cols: usize, entries: Vec<i8>) -> Result<Self> {
        assert!(rank >= 1 && rows >= 1 && cols >= 1, "tensor dims must be positive");
        assert_eq!(entries.len(), rank * rows * cols, "entry count must match dims");
        for (idx, &v) in entries.iter().enumerate() {
            if !(-1..=1).contains(&v) {
                let per = rows * cols;
                return Err(Error::CoefficientRange {
                    tensor: name,
                    r: idx / per,
                    row: (idx % per) / cols,
                    col: idx % cols,
                    value: v as i64,
                });
            }
        }
        Ok(Self { rank, rows, cols, entries })
    }

    pub fn zeros(rank: usize, rows: usize, cols: usize) -> Self {
        assert!(rank >= 1 && rows >= 1 && cols >= 1, "tensor dims must be positive");
        Self { rank, rows, cols, entries: vec![0; rank * rows * cols] }
    }

    /// (rank, rows, cols)
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rank, self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, row: usize, col: usize) -> i8 {
        self.entries[(r * self.rows + row) * self.cols + col]
    }

    /// Sets one coefficient; panics outside {-1, 0, 1} or out of range.
    pub fn set(&mut self, r: usize, row: usize, col: usize, value: i8) {
        assert!((-1..=1).contains(&value), "coefficient must be in {{-1, 0, 1}}");
        self.entries[(r * self.rows + row) * self.cols + col] = value;
    }

    /// Number of nonzero coefficients.
    pub fn nnz(&self) -> usize {
        self.entries.iter().filter(|&&v| v != 0).count()
    }

    /// Nonzero count within one product's slice.
    pub fn nnz_at(&self, r: usize) -> usize {
        let per = self.rows * self.cols;
        self.entries[r * per..(r + 1) * per].iter().filter(|&&v| v != 0).count()
    }

    /// One product's coefficients as a (row-major) slice.
    pub fn slice(&self, r: usize) -> &[i8] {
        let per = self.rows * self.cols;
        &self.entries[r * per..(r + 1) * per]
    }
}

impl fmt::Debug for CoeffTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoeffTensor({}x{}x{}, nnz={})", self.rank, self.rows, self.cols, self.nnz())
    }
}

/// Number of nonzero coefficients in a tensor.
pub fn nnz(t: &CoeffTensor) -> usize {
    t.nnz()
}

/// One violated identity equation: the six block indices, the coefficient sum
/// the tensors produced, and the Kronecker value it must equal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityFailure {
    /// C/W row index i.
    pub out_row: usize,
    /// U row index i'.
    pub a_row: usize,
    /// U column index l.
    pub a_col: usize,
    /// V row index l'.
    pub b_row: usize,
    /// C/W column index j.
    pub out_col: usize,
    /// V column index j'.
    pub b_col: usize,
    pub observed: i64,
    pub expected: i64,
}

impl fmt::Display for IdentityFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(i={}, i'={}, l={}, l'={}, j={}, j'={}): sum {} but identity requires {}",
            self.out_row, self.a_row, self.a_col, self.b_row, self.out_col, self.b_col,
            self.observed, self.expected
        )
    }
}

/// Outcome of an exhaustive identity check.
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub valid: bool,
    /// Every violated equation, in lexicographic index order.
    pub failures: Vec<IdentityFailure>,
    /// Number of equations checked: m^2 * k^2 * n^2.
    pub checked_count: usize,
}

/// A validated-on-demand bilinear scheme `<m,k,n; R>`.
///
/// `rank < m*k*n` marks a lower-complexity scheme; the classical algorithm is
/// representable too (`rank == m*k*n`) and is what [`standard_scheme`] builds.
#[derive(Clone, Debug)]
pub struct LcmaScheme {
    name: String,
    m: usize,
    k: usize,
    n: usize,
    rank: usize,
    u: CoeffTensor,
    v: CoeffTensor,
    w: CoeffTensor,
    validity: OnceLock<bool>,
}

impl LcmaScheme {
    /// Assembles a scheme, checking tensor shapes against (m, k, n, rank).
    /// The bilinear identity itself is checked by [`validate`](Self::validate).
    pub fn new(
        name: impl Into<String>,
        m: usize,
        k: usize,
        n: usize,
        rank: usize,
        u: CoeffTensor,
        v: CoeffTensor,
        w: CoeffTensor,
    ) -> Result<Self> {
        assert!(m >= 1 && k >= 1 && n >= 1, "block grid dims must be positive");
        assert!(rank >= 1, "rank must be positive");
        for (tensor, t, want) in [
            ("U", &u, (rank, m, k)),
            ("V", &v, (rank, k, n)),
            ("W", &w, (rank, m, n)),
        ] {
            if t.dims() != want {
                return Err(Error::TensorShape { tensor, got: t.dims(), want });
            }
        }
        Ok(Self { name: name.into(), m, k, n, rank, u, v, w, validity: OnceLock::new() })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Returns the same scheme under a different catalog name.
    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn u(&self) -> &CoeffTensor {
        &self.u
    }

    pub fn v(&self) -> &CoeffTensor {
        &self.v
    }

    pub fn w(&self) -> &CoeffTensor {
        &self.w
    }

    /// True when the scheme beats the classical block-product count.
    pub fn lower_complexity(&self) -> bool {
        self.rank < self.m * self.k * self.n
    }

    /// Exhaustively checks the bilinear identity over all m^2 k^2 n^2 index
    /// tuples in exact i64 arithmetic and reports every violation.
    pub fn validate(&self) -> ValidationReport {
        let (m, k, n) = (self.m, self.k, self.n);
        let mut failures = Vec::new();
        for i in 0..m {
            for i2 in 0..m {
                for l in 0..k {
                    for l2 in 0..k {
                        for j in 0..n {
                            for j2 in 0..n {
                                let mut sum: i64 = 0;
                                for r in 0..self.rank {
                                    sum += self.w.get(r, i, j) as i64
                                        * self.u.get(r, i2, l) as i64
                                        * self.v.get(r, l2, j2) as i64;
                                }
                                let expected = i64::from(i == i2 && l == l2 && j == j2);
                                if sum != expected {
                                    failures.push(IdentityFailure {
                                        out_row: i,
                                        a_row: i2,
                                        a_col: l,
                                        b_row: l2,
                                        out_col: j,
                                        b_col: j2,
                                        observed: sum,
                                        expected,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        let report = ValidationReport {
            valid: failures.is_empty(),
            failures,
            checked_count: m * m * k * k * n * n,
        };
        let _ = self.validity.set(report.valid);
        report
    }

    /// Cached validity: the first call runs the exhaustive check, later calls
    /// reuse its verdict.
    pub fn is_valid(&self) -> bool {
        match self.validity.get() {
            Some(&cached) => cached,
            // validate() fills the cache itself; do not get_or_init here,
            // initializing the cell from inside its own initializer hangs.
            None => self.validate().valid,
        }
    }

    /// Errors with the first violated equation unless the scheme is valid.
    pub fn ensure_valid(&self) -> Result<()> {
        if self.is_valid() {
            return Ok(());
        }
        let report = self.validate();
        Err(Error::InvalidScheme {
            name: self.name.clone(),
            first: report.failures[0].clone(),
        })
    }
}

/// Full identity check of a scheme (see [`LcmaScheme::validate`]).
pub fn validate_scheme(scheme: &LcmaScheme) -> ValidationReport {
    scheme.validate()
}

/// The classical algorithm `<m,k,n; m*k*n>`: product (i, l, j) multiplies
/// A_(i,l) by B_(l,j) and adds it into C_(i,j).
pub fn standard_scheme(m: usize, k: usize, n: usize) -> LcmaScheme {
    assert!(m >= 1 && k >= 1 && n >= 1, "block grid dims must be positive");
    let rank = m * k * n;
    let mut u = CoeffTensor::zeros(rank, m, k);
    let mut v = CoeffTensor::zeros(rank, k, n);
    let mut w = CoeffTensor::zeros(rank, m, n);
    for i in 0..m {
        for l in 0..k {
            for j in 0..n {
                let r = (i * k + l) * n + j;
                u.set(r, i, l, 1);
                v.set(r, l, j, 1);
                w.set(r, i, j, 1);
            }
        }
    }
    LcmaScheme::new(format!("standard-{m}x{k}x{n}-r{rank}"), m, k, n, rank, u, v, w)
        .expect("tensor shapes match by construction")
}

/// Composes two schemes into one for the product block grid:
/// `<m1*m2, k1*k2, n1*n2; R1*R2>`. Outer indices are the high digits, so the
/// composed scheme applies `outer` at the top level with `inner` inside each
/// outer block product.
///
/// Coefficients multiply pointwise per product pair and stay in {-1, 0, 1}.
/// The result is valid whenever both inputs are (checked here).
pub fn compose(outer: &LcmaScheme, inner: &LcmaScheme) -> Result<LcmaScheme> {
    outer.ensure_valid()?;
    inner.ensure_valid()?;
    let (m, k, n) = (outer.m * inner.m, outer.k * inner.k, outer.n * inner.n);
    let rank = outer.rank * inner.rank;

    let tensor = |t1: &CoeffTensor, t2: &CoeffTensor| -> CoeffTensor {
        let (_, r1, c1) = t1.dims();
        let (_, r2, c2) = t2.dims();
        let mut out = CoeffTensor::zeros(rank, r1 * r2, c1 * c2);
        for ra in 0..outer.rank {
            for rb in 0..inner.rank {
                let r = ra * inner.rank + rb;
                for row_a in 0..r1 {
                    for row_b in 0..r2 {
                        for col_a in 0..c1 {
                            for col_b in 0..c2 {
                                let prod = t1.get(ra, row_a, col_a) * t2.get(rb, row_b, col_b);
                                if prod != 0 {
                                    out.set(r, row_a * r2 + row_b, col_a * c2 + col_b, prod);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    };

    LcmaScheme::new(
        format!("compose({},{})", outer.name, inner.name),
        m,
        k,
        n,
        rank,
        tensor(&outer.u, &inner.u),
        tensor(&outer.v, &inner.v),
        tensor(&outer.w, &inner.w),
    )
}
