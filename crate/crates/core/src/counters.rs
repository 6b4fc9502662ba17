//! Operation counters shared by all kernels and executors.

use std::ops::AddAssign;

/// Scalar-arithmetic and memory-traffic tallies.
///
/// Conventions, kept identical across kernels so counts are comparable:
///
/// * The first write to an accumulator is an assignment, so a K-term
///   reduction counts K-1 adds and a linear combination of c blocks counts
///   c-1 adds per element.
/// * `elements_loaded`/`elements_stored` follow each algorithm's access
///   pattern at element granularity: GEMMs count each operand element once
///   and each output element once; staged combines count one load per
///   nonzero coefficient per block element and one store per produced
///   element; the fused path counts each source element once, counts no
///   intermediate-product traffic at all, and stores C once.
/// * Only in-range elements count when a padded grid covers a source or
///   output partially.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub scalar_multiplies: u64,
    pub scalar_adds: u64,
    pub elements_loaded: u64,
    pub elements_stored: u64,
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Total memory traffic in elements.
    pub fn mem_elements(&self) -> u64 {
        self.elements_loaded + self.elements_stored
    }

    /// Total arithmetic in scalar operations.
    pub fn flops(&self) -> u64 {
        self.scalar_multiplies + self.scalar_adds
    }
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.scalar_multiplies += rhs.scalar_multiplies;
        self.scalar_adds += rhs.scalar_adds;
        self.elements_loaded += rhs.elements_loaded;
        self.elements_stored += rhs.elements_stored;
    }
}

impl std::iter::Sum for OpCounters {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        let mut total = Self::default();
        for c in iter {
            total += c;
        }
        total
    }
}
