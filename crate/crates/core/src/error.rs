use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "solver did not converge after {iterations} iterations (residual {residual:.3e} > tolerance {tolerance:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("coefficient pair not in D(lambda, kappa): {0}")]
    NotAdmissible(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("reconstruction degeneracy: {message} (minimum {min_value:.3e} at {location:?})")]
    Degeneracy {
        message: String,
        min_value: f64,
        location: [f64; 3],
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed field file {path}: {message}")]
    FieldFormat { path: PathBuf, message: String },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn at_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// True for errors that signal degenerate input rather than a failure.
    pub fn is_degeneracy(&self) -> bool {
        match self {
            Error::DegenerateData(_) | Error::Degeneracy { .. } => true,
            Error::Stage { source, .. } => source.is_degeneracy(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
