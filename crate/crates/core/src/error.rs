use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid target band ({lo}, {hi}): need 0 < lo <= hi")]
    InvalidBand { lo: f64, hi: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("layer index {index} out of range for a network of depth {depth}")]
    LayerOutOfRange { index: usize, depth: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("input data is not whitened (max deviation {deviation:e})")]
    NotWhitened { deviation: f64 },

    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal {residual:e})")]
    SvdNoConvergence { sweeps: usize, residual: f64 },

    #[error("operation requires {0}")]
    WrongArchitecture(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("incompatible runs: {0}")]
    IncompatibleRuns(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn shape_err(expected: (usize, usize), got: (usize, usize)) -> Error {
    Error::ShapeMismatch {
        expected: format!("{}x{}", expected.0, expected.1),
        got: format!("{}x{}", got.0, got.1),
    }
}
