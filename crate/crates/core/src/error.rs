use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad magic, unsupported version, or an impossible header.
    #[error("format error: {0}")]
    Format(String),

    #[error("validation error: {0}")]
    Validation(String),

    /// Input outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("sample too small: got {got} distances, need at least {need}; increase the pair sample")]
    SampleSize { got: usize, need: usize },

    #[error("degenerate distance distribution: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{stage} stage failed ({context}): {source}")]
    Stage {
        stage: &'static str,
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: &'static str, context: impl Into<String>) -> Self {
        Error::Stage { stage, context: context.into(), source: Box::new(self) }
    }

    /// Process exit code for this error: 1 validation, 2 I/O, 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Divergence { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
