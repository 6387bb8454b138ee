use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An integrated state left the `|x|, |y| <= 1e6` box.
    #[error("FHN integration diverged at t = {time}: state ({x}, {y}) exceeds the 1e6 guard")]
    Divergence { time: f64, x: f64, y: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("invalid value: {0}")]
    Value(String),

    #[error("dataset `{dataset}` has only {available} examples of digit {digit}, {requested} requested")]
    InsufficientClass {
        dataset: String,
        digit: u8,
        available: usize,
        requested: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input files or directories that do not exist.
    #[error("missing data: {0}")]
    MissingData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
