use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this graph; rebuild it with a fresh forward pass")]
    BackwardTwice,

    #[error("softmax: every position of row {row} is masked")]
    AllMasked { row: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("NaN gradient for parameter `{0}`")]
    NanGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("{layer}: dimension mismatch, expected {expected} got {got}")]
    Dimension {
        layer: String,
        expected: usize,
        got: usize,
    },

    #[error("variant `{variant}` requires the `{channel}` tag channel but the batch has none")]
    MissingTagChannel {
        variant: &'static str,
        channel: &'static str,
    },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("corpus {path}: {skipped} of {total} lines malformed (more than 10%)")]
    MalformedCorpus {
        path: PathBuf,
        skipped: usize,
        total: usize,
    },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("no tokens to analyze")]
    NoTokens,

    #[error("NaN loss at step {step} (batch {batch_index}, seed {seed})")]
    NanLoss {
        step: usize,
        batch_index: usize,
        seed: u64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{failed} of {total} gradient checks exceeded the tolerance")]
    GradCheck { failed: usize, total: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidArgument { .. } => "invalid-argument",
            Error::NonScalarLoss(_) => "non-scalar-loss",
            Error::BackwardTwice => "backward-twice",
            Error::AllMasked { .. } => "all-masked",
            Error::NonFinite(_) => "non-finite",
            Error::NanGradient(_) => "nan-gradient",
            Error::UnknownParam(_) => "unknown-param",
            Error::Dimension { .. } => "dimension",
            Error::MissingTagChannel { .. } => "missing-tag-channel",
            Error::EmptyCorpus(_) => "empty-corpus",
            Error::MalformedCorpus { .. } => "malformed-corpus",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::NoTokens => "no-tokens",
            Error::NanLoss { .. } => "nan-loss",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::GradCheck { .. } => "gradcheck",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }
}
