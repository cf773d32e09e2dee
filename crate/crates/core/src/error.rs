use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("cell ({row}, {col}) is outside the {rows}x{cols} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("no measured cells; at least one is required")]
    NoMeasurements,

    #[error("channel selection {requested:?} does not match the model's {expected:?}")]
    ChannelMismatch {
        requested: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("{0}")]
    Runtime(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Whether the failure stems from bad user input (as opposed to a
    /// failure while running a valid request).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::GridMismatch(_)
                | Error::OutOfBounds { .. }
                | Error::NoMeasurements
                | Error::ChannelMismatch { .. }
                | Error::ModelFormat(_)
                | Error::Json(_)
        )
    }
}
