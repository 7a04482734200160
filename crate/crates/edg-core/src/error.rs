//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong in this crate.
#[derive(Debug, Error)]
pub enum EdgError {
    /// A point or pair index lies outside `1..=n`.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// Operand shapes are inconsistent.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A NaN or infinity appeared inside an iterative solve.
    #[error("non-finite iterate encountered: {0}")]
    NonFiniteIterate(String),

    /// An iterative method exhausted its budget without meeting its residual
    /// contract.
    #[error("convergence failure: {0}")]
    ConvergenceFailure(String),

    /// A scaling denominator of the reduced-system core matrix underflowed;
    /// the smoothing parameter is too close to a kept eigenvalue.
    #[error("singular core matrix: {0}")]
    SingularC(String),

    /// Input exceeds a brute-force guard.
    #[error("problem too large: {0}")]
    TooLarge(String),

    /// More samples requested than distinct pairs exist.
    #[error("too many samples: {0}")]
    TooMany(String),

    /// A matrix that must be positive semidefinite is not (beyond tolerance).
    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    /// A reference cloud with zero centered norm cannot anchor a relative
    /// Procrustes distance.
    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    /// Malformed input text; carries the 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },

    /// A loader produced no points.
    #[error("empty point cloud: {0}")]
    EmptyCloud(String),

    /// Input data violates a documented precondition (negative squared
    /// distance, inconsistent lengths, and the like).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Filesystem failure while reading or writing artifacts.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EdgError>;
