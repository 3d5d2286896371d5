use thiserror::Error;

/// Errors raised by model construction and the optimization stages.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not Hermitian (asymmetry {0:.3e})")]
    NotHermitian(f64),

    #[error("quadratic term of constraint {index} is not PSD (min eigenvalue {min_eig:.3e})")]
    NotPsd { index: usize, min_eig: f64 },

    #[error("problem has {0} variables, above the small-scale limit")]
    TooLarge(usize),

    #[error("degenerate direction: expansion point coincides with a neighbouring antenna")]
    CoincidentPoints,

    #[error("placement region too small: {0}")]
    RegionTooSmall(String),

    #[error("could not place {antennas} antennas after {attempts} attempts")]
    PackingFailed { antennas: usize, attempts: usize },

    #[error("initialization failed: {0}")]
    InitFailed(String),

    #[error("grid oracle supports at most 2 antennas, got {0}")]
    OracleTooLarge(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
