use std::path::PathBuf;

use thiserror::Error;

use crate::guidance::TraceStep;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a type invariant (e.g. root not coprime with length).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or insufficient input data.
    #[error("input error: {0}")]
    Input(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("follower diverged at t = {time_s:.2} s (cross-track {error_m:.2} m > limit {limit_m:.2} m)")]
    Divergence {
        time_s: f64,
        error_m: f64,
        limit_m: f64,
        partial: Vec<TraceStep>,
    },

    #[error("tuning failed: {0}")]
    Tuning(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    /// Short, stable class name used in machine-readable CLI error lines.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Domain(_) => "domain",
            Error::Input(_) => "input",
            Error::Geometry(_) => "geometry",
            Error::Fit(_) => "fit",
            Error::Divergence { .. } => "divergence",
            Error::Tuning(_) => "tuning",
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }

    /// Process exit code for the CLI. 1 and 2 are left to generic failures
    /// and usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 3,
            Error::Io { .. } => 4,
            Error::Format { .. } => 5,
            Error::Parameter(_) => 6,
            Error::Domain(_) => 7,
            Error::Input(_) => 8,
            Error::Geometry(_) => 9,
            Error::Fit(_) => 10,
            Error::Divergence { .. } => 11,
            Error::Tuning(_) => 12,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
