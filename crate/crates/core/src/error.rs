use thiserror::Error;

/// Errors raised by the simulation, filtering and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("node {node} has degree {degree}, above the kernel's maximum degree {max}")]
    DegreeOutOfRange {
        node: usize,
        degree: usize,
        max: usize,
    },

    #[error("degree class {degree} has zero probability mass")]
    EmptyDegreeClass { degree: usize },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("singular matrix in {context} (condition number {condition:.3e})")]
    Singular {
        context: &'static str,
        condition: f64,
    },

    #[error("matrix in {context} is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite {
        context: &'static str,
        min_eigenvalue: f64,
    },

    #[error("{0}")]
    Numerical(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
