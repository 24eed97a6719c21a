use std::io;

use thiserror::Error;

/// Errors raised by the estimation, forecasting and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A CSV cell could not be interpreted.
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// A factorization or sampler step produced an unusable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Failure inside one equation's sampler, with location context.
    #[error("equation {equation}, sweep {sweep}: {source}")]
    Equation {
        equation: usize,
        sweep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// True when the root cause is numerical rather than a bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) => true,
            Error::Equation { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// True when the root cause is file-system or serialization related.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) | Error::Serde(_) | Error::Csv(_) => true,
            Error::Equation { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
