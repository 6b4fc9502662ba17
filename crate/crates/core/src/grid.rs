//! Zero-padded block partitioning of matrices.
//!
//! A scheme over an m x k block grid needs its operand cut into exactly
//! m * k blocks of equal size. [`pad_partition`] views an arbitrary matrix
//! that way: block dims are rounded up and out-of-range positions read as
//! zero, so no copy is made and the original matrix is recovered by cropping
//! the reassembled blocks.

use crate::error::{Error, Result};
use crate::matrix::{Element, Matrix};

/// Read-only view of a matrix as a `grid_rows x grid_cols` grid of
/// ceiling-sized, zero-padded blocks.
#[derive(Clone, Copy)]
pub struct GridView<'a, T> {
    src: &'a Matrix<T>,
    grid_rows: usize,
    grid_cols: usize,
    block_rows: usize,
    block_cols: usize,
}

impl<'a, T: Element> GridView<'a, T> {
    pub fn src(&self) -> &'a Matrix<T> {
        self.src
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    /// Rows per block: ceil(src rows / grid rows).
    pub fn block_rows(&self) -> usize {
        self.block_rows
    }

    /// Columns per block: ceil(src cols / grid cols).
    pub fn block_cols(&self) -> usize {
        self.block_cols
    }

    /// Element (x, y) of block (bi, bj); zero where the block extends past
    /// the source.
    #[inline]
    pub fn get(&self, bi: usize, bj: usize, x: usize, y: usize) -> T {
        debug_assert!(bi < self.grid_rows && bj < self.grid_cols);
        debug_assert!(x < self.block_rows && y < self.block_cols);
        let r = bi * self.block_rows + x;
        let c = bj * self.block_cols + y;
        if r < self.src.rows() && c < self.src.cols() {
            self.src.get(r, c)
        } else {
            T::ZERO
        }
    }

    /// In-range rows of blocks in grid row `bi` (less than `block_rows` only
    /// for the last partially covered row of blocks).
    pub fn in_range_rows(&self, bi: usize) -> usize {
        let start = bi * self.block_rows;
        self.src.rows().saturating_sub(start).min(self.block_rows)
    }

    /// In-range columns of blocks in grid column `bj`.
    pub fn in_range_cols(&self, bj: usize) -> usize {
        let start = bj * self.block_cols;
        self.src.cols().saturating_sub(start).min(self.block_cols)
    }

    /// Copies block (bi, bj) into a padded `block_rows x block_cols` matrix.
    pub fn block(&self, bi: usize, bj: usize) -> Matrix<T> {
        let mut out = Matrix::zeros(self.block_rows, self.block_cols);
        for x in 0..self.in_range_rows(bi) {
            for y in 0..self.in_range_cols(bj) {
                out.set(x, y, self.get(bi, bj, x, y));
            }
        }
        out
    }
}

/// Views `src` as a zero-padded `grid_rows x grid_cols` block grid.
pub fn pad_partition<T: Element>(src: &Matrix<T>, grid_rows: usize, grid_cols: usize) -> GridView<'_, T> {
    assert!(grid_rows >= 1 && grid_cols >= 1, "grid dims must be positive");
    GridView {
        src,
        grid_rows,
        grid_cols,
        block_rows: src.rows().div_ceil(grid_rows),
        block_cols: src.cols().div_ceil(grid_cols),
    }
}

/// Checks a grid against the block shape a scheme expects of one operand.
pub fn expect_grid<T: Element>(
    grid: &GridView<'_, T>,
    scheme_name: &str,
    want_rows: usize,
    want_cols: usize,
) -> Result<()> {
    if grid.grid_rows() != want_rows || grid.grid_cols() != want_cols {
        return Err(Error::GridMismatch {
            scheme: scheme_name.to_string(),
            got_rows: grid.grid_rows(),
            got_cols: grid.grid_cols(),
            want_rows,
            want_cols,
        });
    }
    Ok(())
}

/// Reassembles row-major-ordered blocks into a `rows x cols` matrix,
/// cropping the padding. Inverse of [`pad_partition`] + [`GridView::block`].
pub fn assemble_crop<T: Element>(
    blocks: &[Matrix<T>],
    grid_rows: usize,
    grid_cols: usize,
    rows: usize,
    cols: usize,
) -> Matrix<T> {
    assert_eq!(blocks.len(), grid_rows * grid_cols, "block count must match grid");
    let block_rows = blocks[0].rows();
    let block_cols = blocks[0].cols();
    let mut out = Matrix::zeros(rows, cols);
    for bi in 0..grid_rows {
        for bj in 0..grid_cols {
            let block = &blocks[bi * grid_cols + bj];
            for x in 0..block_rows.min(rows.saturating_sub(bi * block_rows)) {
                for y in 0..block_cols.min(cols.saturating_sub(bj * block_cols)) {
                    out.set(bi * block_rows + x, bj * block_cols + y, block.get(x, y));
                }
            }
        }
    }
    out
}
