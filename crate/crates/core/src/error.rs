//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: score {score} out of range [0, 100]")]
    ScoreOutOfRange {
        path: String,
        line: usize,
        score: f64,
    },

    #[error("embedding dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("example {example_id} references unknown embedding {embedding_id}")]
    DanglingReference {
        example_id: String,
        embedding_id: String,
    },

    #[error("example {example_id} has an empty score list")]
    EmptyScores { example_id: String },

    #[error("example {example_id} has duplicate listener {listener_id}")]
    DuplicateListener {
        example_id: String,
        listener_id: String,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("input length mismatch: {left} vs {right} ({context})")]
    LengthMismatch {
        left: usize,
        right: usize,
        context: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("zero variance in {0}; correlation is undefined")]
    ZeroVariance(String),

    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("non-finite gradient at {path}")]
    NonFiniteGradient { path: String },

    #[error("non-finite loss for example {example_id}")]
    NonFiniteLoss { example_id: String },

    #[error("unknown id: {0}")]
    UnknownId(String),

    #[error("no score distribution for prediction {0}")]
    MissingDistribution(String),

    #[error("score {score} does not belong to the distribution of example {example_id}")]
    ScoreNotInDistribution { example_id: String, score: f64 },

    #[error("dataset already contains sub-utterance pieces")]
    PiecesAlreadyPresent,

    #[error("dataset has no sub-utterance pieces")]
    PiecesMissing,

    #[error("histogram bin edges must be strictly increasing with at least 2 edges")]
    InvalidBinEdges,

    #[error("unknown metric {got:?}; valid values: {valid}")]
    UnknownMetric { got: String, valid: String },

    #[error("unknown loss {got:?}; valid values: {valid}")]
    UnknownLoss { got: String, valid: String },

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("invalid cross-validation plan: {0}")]
    InvalidPlan(String),

    #[error("stale activation cache: {0}")]
    StaleCache(String),
}

impl Error {
    /// Stable machine-readable code for CLI error reporting.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedRecord { .. } => "malformed-record",
            Error::ScoreOutOfRange { .. } => "score-out-of-range",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::DanglingReference { .. } => "dangling-reference",
            Error::EmptyScores { .. } => "empty-scores",
            Error::DuplicateListener { .. } => "duplicate-listener",
            Error::InvalidConfig(_) => "invalid-config",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::EmptyInput(_) => "empty-input",
            Error::ZeroVariance(_) => "zero-variance",
            Error::ZeroNorm(_) => "zero-norm",
            Error::NonFinite(_) => "non-finite",
            Error::NonFiniteGradient { .. } => "non-finite-gradient",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::UnknownId(_) => "unknown-id",
            Error::MissingDistribution(_) => "missing-distribution",
            Error::ScoreNotInDistribution { .. } => "score-not-in-distribution",
            Error::PiecesAlreadyPresent => "pieces-already-present",
            Error::PiecesMissing => "pieces-missing",
            Error::InvalidBinEdges => "invalid-bin-edges",
            Error::UnknownMetric { .. } => "unknown-metric",
            Error::UnknownLoss { .. } => "unknown-loss",
            Error::InvalidCheckpoint(_) => "invalid-checkpoint",
            Error::InvalidPlan(_) => "invalid-plan",
            Error::StaleCache(_) => "stale-cache",
        }
    }
}
