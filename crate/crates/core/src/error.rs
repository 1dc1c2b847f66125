use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad or inconsistent configuration (missing CSV column, invalid knob).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error at line {line}: {message}")]
    Ingest { line: u64, message: String },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("no stored embedding for text {0:?}")]
    Lookup(String),

    #[error("embedding provider error: {0}")]
    Provider(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Training { epoch: usize, batch: usize, loss: f64 },

    #[error("query error: {0}")]
    Query(String),

    #[error("unsupported query: {0}")]
    UnsupportedQuery(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by input data or caller contracts, as opposed
    /// to runtime faults (I/O, unreachable providers, corrupt artifacts).
    pub fn is_data_error(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::Provider(_) | Error::Artifact(_)
        )
    }
}
