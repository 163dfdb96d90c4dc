use std::path::PathBuf;

/// Errors raised anywhere in the retrieval pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error in dialogue '{dialogue}' at {field}: {reason}")]
    Schema {
        dialogue: String,
        field: String,
        reason: String,
    },

    #[error("dialogue '{dialogue}': user turn {turn} has no state annotation")]
    MissingAnnotation { dialogue: String, turn: usize },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("latest utterance has {tokens} tokens, more than the {max_len}-token limit")]
    LatestUtteranceTooLong { tokens: usize, max_len: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("conversation has no latest-utterance tokens")]
    NoLatestTokens,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("non-finite loss encountered")]
    NonFiniteLoss,

    #[error("training needs at least two pairs unless batch size is 1 (got {0})")]
    InsufficientPairs(usize),

    #[error("summarizer backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("backend returned an empty completion")]
    EmptyCompletion,

    #[error("summarization failed for '{id}': {source}")]
    SummarizeFailed {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("no cached summary for example '{0}'")]
    MissingSummary(String),

    #[error("index is empty")]
    EmptyIndex,

    #[error("fingerprint mismatch: index built with {expected}, active checkpoint is {actual}")]
    FingerprintMismatch { expected: String, actual: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("bad magic bytes: expected {0} file")]
    BadMagic(&'static str),

    #[error("checksum error: {0}")]
    Checksum(String),

    #[error("requested {requested} examples but only {available} are available")]
    InsufficientExamples { requested: usize, available: usize },

    #[error("length mismatch: {predictions} predictions vs {golds} gold states")]
    LengthMismatch { predictions: usize, golds: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backend failed on {0} consecutive turns; aborting experiment")]
    SystemicBackendFailure(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether retrying the same request may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::BackendUnavailable(_))
    }
}
