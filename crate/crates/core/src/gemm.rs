//! Classical dense GEMM kernels: the reference triple loop and a
//! cache-blocked variant with optional wide accumulation.

use rayon::prelude::*;

use crate::counters::OpCounters;
use crate::error::{Error, Result};
use crate::matrix::{Element, Matrix};

/// Blocking parameters for [`blocked_gemm`] and the executors' inner GEMMs:
/// output tiles of `rows x cols` accumulated over `depth`-wide K panels.
///
/// `wide_accumulate` runs accumulators in [`Element::Wide`] precision and
/// narrows on store (an f32 kernel accumulates in f64; exact types are
/// unaffected).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileConfig {
    pub rows: usize,
    pub cols: usize,
    pub depth: usize,
    pub wide_accumulate: bool,
}

impl TileConfig {
    pub fn new(rows: usize, cols: usize, depth: usize) -> Self {
        assert!(rows >= 1 && cols >= 1 && depth >= 1, "tile dims must be positive");
        Self { rows, cols, depth, wide_accumulate: false }
    }

    pub fn wide(mut self) -> Self {
        self.wide_accumulate = true;
        self
    }
}

impl Default for TileConfig {
    fn default() -> Self {
        Self::new(64, 64, 64)
    }
}

/// Accumulator abstraction letting one kernel body run in native or wide
/// precision. The first product is an assignment; see [`OpCounters`].
pub(crate) trait Accum<T: Element>: Copy + Send + Sync {
    fn zero() -> Self;
    fn from_prod(a: T, b: T) -> Self;
    fn fma(self, a: T, b: T) -> Self;
    fn add(self, other: Self) -> Self;
    fn sub(self, other: Self) -> Self;
    fn finish(self) -> T;
}

#[derive(Clone, Copy)]
pub(crate) struct NativeAcc<T>(pub T);

impl<T: Element> Accum<T> for NativeAcc<T> {
    #[inline]
    fn zero() -> Self {
        Self(T::ZERO)
    }
    #[inline]
    fn from_prod(a: T, b: T) -> Self {
        Self(a.mul(b))
    }
    #[inline]
    fn fma(self, a: T, b: T) -> Self {
        Self(self.0.add(a.mul(b)))
    }
    #[inline]
    fn add(self, other: Self) -> Self {
        Self(self.0.add(other.0))
    }
    #[inline]
    fn sub(self, other: Self) -> Self {
        Self(self.0.sub(other.0))
    }
    #[inline]
    fn finish(self) -> T {
        self.0
    }
}

#[derive(Clone, Copy)]
pub(crate) struct WideAcc<T: Element>(pub T::Wide);

impl<T: Element> Accum<T> for WideAcc<T> {
    #[inline]
    fn zero() -> Self {
        Self(T::wide_zero())
    }
    #[inline]
    fn from_prod(a: T, b: T) -> Self {
        Self(T::wide_mul(a, b))
    }
    #[inline]
    fn fma(self, a: T, b: T) -> Self {
        Self(T::wide_add(self.0, T::wide_mul(a, b)))
    }
    #[inline]
    fn add(self, other: Self) -> Self {
        Self(T::wide_add(self.0, other.0))
    }
    #[inline]
    fn sub(self, other: Self) -> Self {
        Self(T::wide_sub(self.0, other.0))
    }
    #[inline]
    fn finish(self) -> T {
        T::narrow(self.0)
    }
}

fn check_dims<T: Element>(a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.cols() != b.rows() {
        return Err(Error::DimMismatch {
            a_rows: a.rows(),
            a_cols: a.cols(),
            b_rows: b.rows(),
            b_cols: b.cols(),
        });
    }
    Ok(())
}

/// GEMM counter convention: operands loaded once, output stored once,
/// M*N*K multiplies, M*N*(K-1) adds.
fn count_gemm(m: usize, n: usize, k: usize, counters: &mut OpCounters) {
    counters.scalar_multiplies += (m * n * k) as u64;
    counters.scalar_adds += (m * n * (k - 1)) as u64;
    counters.elements_loaded += (m * k + k * n) as u64;
    counters.elements_stored += (m * n) as u64;
}

/// Reference row-parallel triple loop. The oracle the rest of the crate is
/// tested against.
pub fn naive_gemm<T: Element>(a: &Matrix<T>, b: &Matrix<T>, counters: &mut OpCounters) -> Result<Matrix<T>> {
    check_dims(a, b)?;
    let (m, n, k) = (a.rows(), b.cols(), a.cols());
    let mut out = Matrix::zeros(m, n);
    out.data_mut().par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
        let a_row = a.row(i);
        let b0 = b.row(0);
        for j in 0..n {
            out_row[j] = a_row[0].mul(b0[j]);
        }
        for (kk, &aik) in a_row.iter().enumerate().skip(1) {
            let b_row = b.row(kk);
            for j in 0..n {
                out_row[j] = out_row[j].add(aik.mul(b_row[j]));
            }
        }
    });
    count_gemm(m, n, k, counters);
    Ok(out)
}

fn blocked_body<T: Element, A: Accum<T>>(a: &Matrix<T>, b: &Matrix<T>, tile: TileConfig) -> Matrix<T> {
    let (m, n, k) = (a.rows(), b.cols(), a.cols());
    let mut out = Matrix::zeros(m, n);
    out.data_mut()
        .par_chunks_mut(tile.rows * n)
        .enumerate()
        .for_each(|(band, out_band)| {
            let row0 = band * tile.rows;
            let band_rows = out_band.len() / n;
            let mut acc = vec![A::zero(); tile.rows * tile.cols];
            for col0 in (0..n).step_by(tile.cols) {
                let tile_cols = tile.cols.min(n - col0);
                for x in 0..band_rows {
                    for y in 0..tile_cols {
                        acc[x * tile_cols + y] = A::zero();
                    }
                }
                for k0 in (0..k).step_by(tile.depth) {
                    let k_end = (k0 + tile.depth).min(k);
                    for x in 0..band_rows {
                        let a_row = a.row(row0 + x);
                        let acc_row = &mut acc[x * tile_cols..(x + 1) * tile_cols];
                        for kk in k0..k_end {
                            let aik = a_row[kk];
                            let b_row = &b.row(kk)[col0..col0 + tile_cols];
                            if kk == 0 {
                                for y in 0..tile_cols {
                                    acc_row[y] = A::from_prod(aik, b_row[y]);
                                }
                            } else {
                                for y in 0..tile_cols {
                                    acc_row[y] = acc_row[y].fma(aik, b_row[y]);
                                }
                            }
                        }
                    }
                }
                for x in 0..band_rows {
                    for y in 0..tile_cols {
                        out_band[x * n + col0 + y] = acc[x * tile_cols + y].finish();
                    }
                }
            }
        });
    out
}

/// Cache-blocked GEMM over output tiles and K panels; same arithmetic order
/// per output element as [`naive_gemm`] (ascending k), so exact element
/// types agree bit for bit and floats agree when accumulation precision
/// matches.
pub fn blocked_gemm<T: Element>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    tile: TileConfig,
    counters: &mut OpCounters,
) -> Result<Matrix<T>> {
    check_dims(a, b)?;
    let out = if tile.wide_accumulate {
        blocked_body::<T, WideAcc<T>>(a, b, tile)
    } else {
        blocked_body::<T, NativeAcc<T>>(a, b, tile)
    };
    count_gemm(a.rows(), b.cols(), a.cols(), counters);
    Ok(out)
}
