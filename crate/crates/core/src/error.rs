use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic {found:?}, expected \"ATSB\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported tensor file version {version}")]
    UnsupportedVersion { path: PathBuf, version: u16 },

    #[error("{path}: malformed tensor header: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("{path}: payload is {actual} bytes but header shape {shape:?} needs {expected}")]
    PayloadLength {
        path: PathBuf,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value {value} at offset {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("{values} values do not fill shape {shape:?}")]
    ValueCount { shape: Vec<usize>, values: usize },

    #[error("mask {path}: {reason}")]
    BadMask { path: PathBuf, reason: String },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("manifest {path}: {source}")]
    ManifestJson {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("manifest field `{field}`: {reason}")]
    Manifest { field: String, reason: String },

    #[error("resolution mismatch: expected {expected:?}, got {actual:?}")]
    ResolutionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn manifest(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Manifest {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
