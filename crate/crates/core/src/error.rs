use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("no rows")]
    NoRows,

    #[error("all {0} rows rejected")]
    AllRowsRejected(usize),

    #[error("unparseable star rating {0:?}")]
    RatingSyntax(String),

    #[error("star rating {0} outside 1..=5")]
    RatingOutOfRange(i64),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid split ratios: {0}")]
    InvalidSplit(String),

    #[error("cannot resolve checkpoint `{0}`")]
    UnresolvableCheckpoint(String),

    #[error("incompatible architecture: {0}")]
    IncompatibleArchitecture(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty text at batch position {0}")]
    EmptyText(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty train split")]
    EmptyTrainSplit,

    #[error("record `{0}` has no true label")]
    MissingTrueLabel(String),

    #[error("empty confusion matrix")]
    EmptyMatrix,

    #[error("ensemble needs ≥ 2 members, got {0}")]
    TooFewMembers(usize),

    #[error("ensemble member `{member}` failed: {source}")]
    MemberFailure {
        member: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingFile(path);
        }
        Error::Io { path, source }
    }

    /// Process exit code for the CLI: 2 for bad input, 1 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::NonFiniteLoss { .. } => 1,
            Error::MemberFailure { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
