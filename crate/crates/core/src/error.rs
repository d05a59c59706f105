use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report. Each variant corresponds to one
/// named validation or runtime condition; nothing returns a partially built
/// value.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate document for subject {subject}, stage {stage}")]
    DuplicateDocument { subject: usize, stage: usize },

    #[error("word index {index} outside vocabulary of size {vocab_size}")]
    VocabMismatch { index: usize, vocab_size: usize },

    #[error("subject {subject} has no group label")]
    MissingLabel { subject: usize },

    #[error("missing document for subject {subject}, stage {stage} (pass --allow-missing to tolerate)")]
    MissingDocument { subject: usize, stage: usize },

    #[error("missing covariate row for subject {subject}, stage {stage}")]
    MissingMetadata { subject: usize, stage: usize },

    #[error("{file}:{line}: {message}")]
    FormatError {
        file: String,
        line: usize,
        message: String,
    },

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("numeric error: {0}")]
    NumericError(String),

    #[error("unknown distance kind `{0}`")]
    UnknownDistance(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    DivergedError { epoch: usize, loss: f64 },

    #[error("topic alignment supports at most 8 topics, got {0}")]
    TooManyTopics(usize),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("configuration error: {0}")]
    ConfigError(String),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::FormatError {
            file: file.into(),
            line,
            message: message.into(),
        }
    }
}
