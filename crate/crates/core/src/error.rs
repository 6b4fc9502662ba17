use crate::scheme::IdentityFailure;

/// Errors surfaced by scheme handling, executors, and the decision model.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("coefficient {value} at (r={r}, row={row}, col={col}) of {tensor} is outside {{-1, 0, 1}}")]
    CoefficientRange {
        tensor: &'static str,
        r: usize,
        row: usize,
        col: usize,
        value: i64,
    },

    #[error("{tensor} tensor has shape {got:?}, scheme requires {want:?}")]
    TensorShape {
        tensor: &'static str,
        got: (usize, usize, usize),
        want: (usize, usize, usize),
    },

    #[error("scheme `{name}` violates the bilinear identity; first failure: {first}")]
    InvalidScheme { name: String, first: IdentityFailure },

    #[error("dimension mismatch: left operand is {a_rows}x{a_cols}, right operand is {b_rows}x{b_cols}")]
    DimMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("block grid is {got_rows}x{got_cols}, scheme `{scheme}` expects {want_rows}x{want_cols}")]
    GridMismatch {
        scheme: String,
        got_rows: usize,
        got_cols: usize,
        want_rows: usize,
        want_cols: usize,
    },

    #[error("precombined B set does not match this run: {message}")]
    PrecombineMismatch { message: String },

    #[error("schedule does not match this run: {message}")]
    ScheduleMismatch { message: String },

    #[error("plan needs {needed} live group buffers on worker {worker}, limit is {limit}")]
    BufferLimit {
        worker: usize,
        needed: usize,
        limit: usize,
    },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
