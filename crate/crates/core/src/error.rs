use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {context}{}{}",
        .round.map(|r| format!(" at round {r}")).unwrap_or_default(),
        .client.map(|c| format!(" (client {c})")).unwrap_or_default())]
    NonFinite {
        context: &'static str,
        round: Option<usize>,
        client: Option<usize>,
    },

    #[error("loss has no closed-form proximal operator; use an iterative local solver")]
    NoClosedForm,

    #[error("local solve missed tolerance {tolerance:e}: certified distance {achieved:e}")]
    ToleranceNotMet { tolerance: f64, achieved: f64 },

    #[error("improper sampling scheme: client {client} has zero selection probability")]
    ImproperSampling { client: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed data: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach round/client coordinates to a [`Error::NonFinite`] raised deeper down.
    pub(crate) fn at(self, round: usize, client: usize) -> Self {
        match self {
            Error::NonFinite { context, .. } => Error::NonFinite {
                context,
                round: Some(round),
                client: Some(client),
            },
            other => other,
        }
    }
}
