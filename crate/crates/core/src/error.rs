use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("embedding row {row} of {matrix} has zero norm")]
    ZeroNormRow { matrix: &'static str, row: usize },

    #[error("class id {class_id} out of range for {num_classes} classes")]
    ClassOutOfRange { class_id: usize, num_classes: usize },

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("malformed {what}: {message}")]
    Format { what: String, message: String },

    #[error("no embedding stored for key `{0}`")]
    MissingKey(String),

    #[error("class count mismatch: file holds {in_file} classes, class list has {expected}")]
    ClassCount { in_file: usize, expected: usize },

    #[error("unknown corruption kind `{0}`")]
    UnknownKind(String),

    #[error("missing {split} split for corruption kind `{kind}`")]
    MissingSplit { kind: String, split: String },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("{0}")]
    Invalid(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn format(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
