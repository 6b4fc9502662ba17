//! Staged execution of a scheme: four separate passes with materialized
//! intermediates.
//!
//! 1. Combine A: build the R left operands A~_r = sum U[r,i,l] * A_(i,l).
//! 2. Combine B: build the R right operands B~_r from V and B's blocks.
//! 3. Batched GEMM: H_r = A~_r * B~_r with the blocked kernel, independently
//!    per product.
//! 4. Combine H: fold C_(i,j) = sum_r W[r,i,j] * H_r and crop the padding.
//!
//! Every intermediate round-trips through memory, which is exactly what the
//! operation counters record; the fused executor exists to remove the H
//! traffic (see [`crate::fused`]).

use rayon::prelude::*;

use crate::counters::OpCounters;
use crate::error::Result;
use crate::gemm::{blocked_gemm, TileConfig};
use crate::grid::{expect_grid, pad_partition, GridView};
use crate::matrix::{Element, Matrix};
use crate::scheme::{CoeffTensor, LcmaScheme};

/// The materialized per-product operands and products of one staged run.
#[derive(Clone, Debug)]
pub struct IntermediateSet<T: Element> {
    /// R left operands, each ceil(M/m) x ceil(K/k).
    pub a_tilde: Vec<Matrix<T>>,
    /// R right operands, each ceil(K/k) x ceil(N/n).
    pub b_tilde: Vec<Matrix<T>>,
    /// R products, each ceil(M/m) x ceil(N/n); empty until stage 3 runs.
    pub h: Vec<Matrix<T>>,
}

/// Applies `coeff` (+1 or -1) to `v` and folds it into `acc`.
#[inline]
fn fold<T: Element>(acc: T, coeff: i8, v: T) -> T {
    if coeff == 1 {
        acc.add(v)
    } else {
        acc.sub(v)
    }
}

/// Shared body of stages 1 and 2: one output per product, each a signed sum
/// of the grid's blocks selected by the tensor's nonzero coefficients.
/// Counters per product: nnz_r block-loads, one block-store, and
/// (nnz_r - 1) block-adds (the first term is an assignment).
fn combine_blocks<T: Element>(
    grid: &GridView<'_, T>,
    tensor: &CoeffTensor,
    counters: &mut OpCounters,
) -> Vec<Matrix<T>> {
    let (rank, rows, cols) = tensor.dims();
    let (br, bc) = (grid.block_rows(), grid.block_cols());
    let block_elems = (br * bc) as u64;

    let per_product: Vec<(Matrix<T>, OpCounters)> = (0..rank)
        .into_par_iter()
        .map(|r| {
            let mut local = OpCounters::new();
            let mut out = Matrix::zeros(br, bc);
            let mut first = true;
            for i in 0..rows {
                for l in 0..cols {
                    let coeff = tensor.get(r, i, l);
                    if coeff == 0 {
                        continue;
                    }
                    local.elements_loaded += block_elems;
                    if first {
                        first = false;
                        for x in 0..br {
                            for y in 0..bc {
                                out.set(x, y, fold(T::ZERO, coeff, grid.get(i, l, x, y)));
                            }
                        }
                    } else {
                        local.scalar_adds += block_elems;
                        for x in 0..br {
                            for y in 0..bc {
                                out.set(x, y, fold(out.get(x, y), coeff, grid.get(i, l, x, y)));
                            }
                        }
                    }
                }
            }
            local.elements_stored += block_elems;
            (out, local)
        })
        .collect();

    let mut outputs = Vec::with_capacity(rank);
    for (out, local) in per_product {
        outputs.push(out);
        *counters += local;
    }
    outputs
}

/// Stage 1: the R left operands from A's padded m x k block grid.
pub fn combine_a<T: Element>(
    a_grid: &GridView<'_, T>,
    scheme: &LcmaScheme,
    counters: &mut OpCounters,
) -> Result<Vec<Matrix<T>>> {
    expect_grid(a_grid, scheme.name(), scheme.m(), scheme.k())?;
    Ok(combine_blocks(a_grid, scheme.u(), counters))
}

/// Stage 2: the R right operands from B's padded k x n block grid.
pub fn combine_b<T: Element>(
    b_grid: &GridView<'_, T>,
    scheme: &LcmaScheme,
    counters: &mut OpCounters,
) -> Result<Vec<Matrix<T>>> {
    expect_grid(b_grid, scheme.name(), scheme.k(), scheme.n())?;
    Ok(combine_blocks(b_grid, scheme.v(), counters))
}

/// Stage 3: H_r = A~_r * B~_r for every product, via [`blocked_gemm`].
pub fn batched_gemm<T: Element>(
    a_tilde: &[Matrix<T>],
    b_tilde: &[Matrix<T>],
    tile: TileConfig,
    counters: &mut OpCounters,
) -> Result<Vec<Matrix<T>>> {
    assert_eq!(a_tilde.len(), b_tilde.len(), "operand sets must pair up");
    let mut h = Vec::with_capacity(a_tilde.len());
    for (ar, br) in a_tilde.iter().zip(b_tilde) {
        h.push(blocked_gemm(ar, br, tile, counters)?);
    }
    Ok(h)
}

/// Stage 4: fold the products into C and crop to `out_shape` = (M, N).
///
/// Arithmetic and loads run over the full padded block extent (the kernels
/// materialized H padded); only in-range elements are stored.
pub fn combine_h<T: Element>(
    h: &[Matrix<T>],
    scheme: &LcmaScheme,
    out_shape: (usize, usize),
    counters: &mut OpCounters,
) -> Matrix<T> {
    let (m, n, rank) = (scheme.m(), scheme.n(), scheme.rank());
    assert_eq!(h.len(), rank, "one product per rank index");
    let (bm, bn) = (h[0].rows(), h[0].cols());
    assert!(h.iter().all(|hr| hr.rows() == bm && hr.cols() == bn), "uneven product shapes");
    let (out_rows, out_cols) = out_shape;
    let block_elems = (bm * bn) as u64;

    let w = scheme.w();
    let mut out = Matrix::zeros(out_rows, out_cols);
    let mut block = vec![T::ZERO; bm * bn];
    for i in 0..m {
        for j in 0..n {
            let mut first = true;
            for r in 0..rank {
                let coeff = w.get(r, i, j);
                if coeff == 0 {
                    continue;
                }
                counters.elements_loaded += block_elems;
                let hr = h[r].data();
                if first {
                    first = false;
                    for (dst, &src) in block.iter_mut().zip(hr) {
                        *dst = fold(T::ZERO, coeff, src);
                    }
                } else {
                    counters.scalar_adds += block_elems;
                    for (dst, &src) in block.iter_mut().zip(hr) {
                        *dst = fold(*dst, coeff, src);
                    }
                }
            }
            if first {
                block.fill(T::ZERO);
            }
            let x_range = bm.min(out_rows.saturating_sub(i * bm));
            let y_range = bn.min(out_cols.saturating_sub(j * bn));
            for x in 0..x_range {
                for y in 0..y_range {
                    out.set(i * bm + x, j * bn + y, block[x * bn + y]);
                }
            }
            counters.elements_stored += (x_range * y_range) as u64;
        }
    }
    out
}

/// Runs all four stages: C = A * B through `scheme` with materialized
/// intermediates. `tile` drives the inner GEMMs; its wide-accumulate flag
/// widens only the product stage, and H is narrowed back to the working
/// precision when materialized.
pub fn lcma_staged<T: Element>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    scheme: &LcmaScheme,
    tile: TileConfig,
    counters: &mut OpCounters,
) -> Result<Matrix<T>> {
    let (c, _) = lcma_staged_full(a, b, scheme, tile, counters)?;
    Ok(c)
}

/// [`lcma_staged`], also returning the materialized intermediates.
pub fn lcma_staged_full<T: Element>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    scheme: &LcmaScheme,
    tile: TileConfig,
    counters: &mut OpCounters,
) -> Result<(Matrix<T>, IntermediateSet<T>)> {
    scheme.ensure_valid()?;
    if a.cols() != b.rows() {
        return Err(crate::error::Error::DimMismatch {
            a_rows: a.rows(),
            a_cols: a.cols(),
            b_rows: b.rows(),
            b_cols: b.cols(),
        });
    }
    let a_grid = pad_partition(a, scheme.m(), scheme.k());
    let b_grid = pad_partition(b, scheme.k(), scheme.n());
    let a_tilde = combine_a(&a_grid, scheme, counters)?;
    let b_tilde = combine_b(&b_grid, scheme, counters)?;
    let h = batched_gemm(&a_tilde, &b_tilde, tile, counters)?;
    let c = combine_h(&h, scheme, (a.rows(), b.cols()), counters);
    Ok((c, IntermediateSet { a_tilde, b_tilde, h }))
}
