use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical integration failed: {0}")]
    Integration(String),

    #[error(
        "fit did not converge after {iterations} iterations (residual norm {residual_norm:.3e})"
    )]
    FitConvergence {
        iterations: usize,
        residual_norm: f64,
    },

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("ambiguous fit: {0}")]
    Ambiguous(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Broad error classes, shared by the CLI exit codes and the C ABI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parameter { .. } | Error::Config(_) | Error::Shape { .. } => ErrorKind::Usage,
            Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => ErrorKind::Data,
            Error::Domain(_)
            | Error::Integration(_)
            | Error::FitConvergence { .. }
            | Error::Degenerate(_)
            | Error::Ambiguous(_) => ErrorKind::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::parameter(
            name,
            format!("must be finite, got {value}"),
        ))
    }
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::parameter(
            name,
            format!("must be positive, got {value}"),
        ))
    }
}
