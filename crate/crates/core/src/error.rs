//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors produced by sampling, data generation, fitting, interpolation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented invariant.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Operand shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// The input is degenerate for the requested operation (e.g. zero norm).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Input data contains non-finite values or is otherwise unusable.
    #[error("invalid data: {0}")]
    Data(String),
    /// Cholesky factorization failed even after the jitter retries.
    #[error("singular system: factorization failed after {retries} jitter retries (last jitter {jitter:e})")]
    Singular { retries: usize, jitter: f64 },
    /// A time integrator produced non-finite values.
    #[error("solver instability: {0}")]
    Instability(String),
    /// An iterative method did not reach its tolerance.
    #[error("{method} did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
    /// An interpolation query lies outside the region covered by the mesh.
    #[error("query {index} at {point:?} lies outside the mesh")]
    OutOfDomain { index: usize, point: Vec<f64> },
    /// Two input points coincide.
    #[error("points {0} and {1} coincide")]
    DuplicatePoints(usize, usize),
    /// All input points are collinear, so no triangulation exists.
    #[error("all points are collinear")]
    Collinear,
    /// A configuration file or value could not be interpreted.
    #[error("configuration error: {0}")]
    Config(String),
    /// A stored container is malformed.
    #[error("format error: {0}")]
    Format(String),
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
