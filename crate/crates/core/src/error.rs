use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed image {path}: {reason}")]
    MalformedImage { path: PathBuf, reason: String },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid HOG parameters: {0}")]
    InvalidHogParams(String),
    #[error("image {width}x{height} is smaller than one HOG block ({block_px}x{block_px} px)")]
    ImageTooSmall { width: usize, height: usize, block_px: usize },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid cluster count k={k} for R={r}")]
    InvalidClusterCount { k: usize, r: usize },
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("inconsistent index: {0}")]
    Inconsistent(String),
    #[error("parse error in {context}: {reason}")]
    Parse { context: String, reason: String },
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(context: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse { context: context.into(), reason: reason.into() }
    }
}
