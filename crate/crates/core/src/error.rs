//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the pipeline. Variants are grouped by how the CLI maps
/// them to exit codes: I/O and format problems exit 2, everything else
/// (validation of inputs, shapes, configs, geometry) exits 1.
#[derive(Debug)]
pub enum Error {
    /// Tensor or model shape disagreement.
    Shape(String),
    /// Operation invoked in an invalid state (e.g. backward twice on a graph).
    State(String),
    /// Invalid argument value (empty dataset, bad config field, ...).
    Argument(String),
    /// Degenerate or ill-conditioned geometry.
    Geometry(String),
    /// Scene or perturbation content violates an invariant.
    Validation(String),
    /// A texture contains colors outside the declared printable set.
    GamutViolation(String),
    /// Requested threshold is unreachable (offset exceeds v*i).
    Infeasible(String),
    /// Malformed file contents.
    Format(String),
    /// Filesystem or codec failure, with the offending path.
    Io { path: PathBuf, message: String },
}

impl Error {
    /// I/O error tagged with the offending path.
    pub fn io(path: impl Into<PathBuf>, err: impl fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// True for errors the CLI reports as exit code 2 (I/O), false for
    /// validation-class errors (exit code 1).
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format(_))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Argument(m) => write!(f, "argument error: {m}"),
            Error::Geometry(m) => write!(f, "geometry error: {m}"),
            Error::Validation(m) => write!(f, "validation error: {m}"),
            Error::GamutViolation(m) => write!(f, "gamut violation: {m}"),
            Error::Infeasible(m) => write!(f, "infeasible: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Io { path, message } => write!(f, "i/o error on {}: {message}", path.display()),
        }
    }
}

impl std::error::Error for Error {}
