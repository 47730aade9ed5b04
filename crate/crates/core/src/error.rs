use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("t = {t} is outside the model domain: {reason}")]
    Domain { t: f64, reason: &'static str },

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("derivative is singular at t = {0}")]
    Singular(f64),

    #[error("invalid time design: {0}")]
    InvalidDesign(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("least-squares fit did not converge from any of {starts} starts")]
    NonConvergence { starts: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("zero pointwise variance at grid index {index} (t = {t}) with the variance floor disabled")]
    DegenerateVariance { index: usize, t: f64 },

    #[error("insufficient valid samples: {have} available, {need} required")]
    InsufficientSamples { have: usize, need: usize },

    #[error("too many bootstrap refit failures: {failed} of {total}")]
    RefitFailures { failed: usize, total: usize },

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("input contains no data rows")]
    EmptyInput,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Broad failure classes, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) => ErrorClass::Usage,
            Error::InvalidDesign(_)
            | Error::DegenerateData(_)
            | Error::Parse { .. }
            | Error::EmptyInput
            | Error::Io { .. }
            | Error::Json(_) => ErrorClass::Data,
            Error::Domain { .. }
            | Error::InvalidParameters(_)
            | Error::Singular(_)
            | Error::NonConvergence { .. }
            | Error::DegenerateVariance { .. }
            | Error::InsufficientSamples { .. }
            | Error::RefitFailures { .. } => ErrorClass::Numerical,
        }
    }
}
