use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: unsupported image format", path.display())]
    UnsupportedFormat { path: PathBuf },
    #[error("{}: corrupt image: {reason}", path.display())]
    CorruptImage { path: PathBuf, reason: String },
    #[error("{}: malformed file: {reason}", path.display())]
    MalformedFile { path: PathBuf, reason: String },
    #[error("invalid dimensions: {0}")]
    Dimensions(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
