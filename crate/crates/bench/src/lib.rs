//! Shared input builders for the criterion benchmarks.

use lcma::matrix::Matrix;

/// Deterministic operand pair: A is m x k seeded with `seed`, B is k x n
/// seeded with `seed + 1`, the same convention the CLI uses.
pub fn seeded_pair(m: usize, k: usize, n: usize, seed: u64) -> (Matrix<f32>, Matrix<f32>) {
    (Matrix::random(m, k, seed), Matrix::random(k, n, seed.wrapping_add(1)))
}
