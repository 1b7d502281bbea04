use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("geometry mismatch: file was computed with spectrogram config {found}, current config is {expected}")]
    GeometryMismatch { expected: String, found: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("{path}:{line}: {msg}")]
    Config {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("manifest is missing keys: {}", .0.join(", "))]
    MissingKeys(Vec<String>),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<hound::Error> for Error {
    fn from(err: hound::Error) -> Self {
        match err {
            // a truncated header surfaces as EOF from the reader
            hound::Error::IoError(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other
                ) =>
            {
                Error::Format(format!("truncated WAV: {e}"))
            }
            hound::Error::IoError(e) => Error::Io(e),
            hound::Error::FormatError(msg) => Error::Format(msg.to_string()),
            hound::Error::Unsupported => Error::UnsupportedFormat(
                "only PCM integer and 32-bit float WAV is supported".into(),
            ),
            other => Error::Format(other.to_string()),
        }
    }
}
