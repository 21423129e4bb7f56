use thiserror::Error;

/// Errors raised by the synthesis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: String,
        found: String,
    },

    #[error("{what} is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { what: String, min_eigenvalue: f64 },

    #[error("{what} is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { what: String, min_eigenvalue: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("moment matrix is not realizable by an affine policy: residual {residual:e} exceeds {tolerance:e}")]
    InconsistentMoments { residual: f64, tolerance: f64 },

    #[error("closed loop is not stable (spectral radius {spectral_radius})")]
    Unstable { spectral_radius: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("simulation diverged at t = {time} s (state norm {norm:e})")]
    Diverged { time: f64, norm: f64 },

    #[error("index {index} out of range for {what} (length {len})")]
    OutOfRange {
        what: String,
        index: usize,
        len: usize,
    },

    #[error("schema error at {field}: {reason}")]
    Schema { field: String, reason: String },

    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_mismatch(
    what: impl Into<String>,
    expected: impl ToString,
    found: impl ToString,
) -> Error {
    Error::DimensionMismatch {
        what: what.into(),
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

pub(crate) fn shape(r: usize, c: usize) -> String {
    format!("{r}x{c}")
}
