use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid episode: {0}")]
    InvalidEpisode(String),

    #[error("encoder: {0}")]
    Encode(String),

    #[error("quest: {0}")]
    Quest(String),

    #[error("training: {0}")]
    Training(String),

    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("checkpoint record `{record}`: {message}")]
    Checkpoint { record: String, message: String },

    #[error("sampling: class {class}: {message}")]
    Sampling { class: i32, message: String },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("evaluation has no class with a nonzero union")]
    EmptyEvaluation,

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

    /// True for errors caused by bad user input rather than an internal failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Training(_) | Error::Quest(_))
    }
}
