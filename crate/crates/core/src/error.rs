use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: csv: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: row {row}, column {column}: {message}")]
    Cell {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("empty cluster {0}: use bounded clustering or fewer clusters")]
    EmptyCluster(usize),

    #[error("cluster {cluster}: {source}")]
    InCluster {
        cluster: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value in t-SNE at iteration {0}")]
    NonFinite(usize),

    #[error("window {window}: {source}")]
    InWindow {
        window: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn in_window(self, window: usize) -> Self {
        Error::InWindow {
            window,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_cluster(self, cluster: usize) -> Self {
        Error::InCluster {
            cluster,
            source: Box::new(self),
        }
    }

    /// Configuration, data-contract and infeasibility errors, as opposed to
    /// numerical failures inside the pipeline.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::InWindow { source, .. } | Error::InCluster { source, .. } => {
                source.is_user_error()
            }
            Error::Io { .. }
            | Error::Csv { .. }
            | Error::Cell { .. }
            | Error::Format { .. }
            | Error::InvalidInput(_)
            | Error::Infeasible(_)
            | Error::EmptyCluster(_)
            | Error::Config(_)
            | Error::Json(_) => true,
            Error::SingularCovariance(_) | Error::NonFinite(_) => false,
        }
    }
}
