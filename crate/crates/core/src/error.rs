use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("token id {id} outside vocabulary of size {vocab}")]
    InvalidTokenId { id: usize, vocab: usize },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("nothing reachable from the loss requires a gradient")]
    EmptyTape,

    #[error("direction vector is zero")]
    ZeroVector,

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("mask does not match model: {0}")]
    MaskShapeMismatch(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("unknown few-shot template `{0}`")]
    UnknownTemplate(String),

    #[error("capture is missing {0}")]
    MissingCapture(&'static str),

    #[error("{0} is aggregate-only")]
    ContextualUnsupported(String),

    #[error("batch of {got} examples is too small (need at least {need})")]
    BatchTooSmall { got: usize, need: usize },

    #[error("every example falls into a single class")]
    SingleClass,

    #[error("pruning budget exceeds available units: {0}")]
    BudgetExceedsUnits(String),

    #[error("{units} prunable units exceed the oracle limit of {max}")]
    TooManyUnits { units: usize, max: usize },

    #[error("prompt is empty")]
    EmptyPrompt,

    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),

    #[error("feature shape mismatch: expected {expected:?}, got {got:?}")]
    FeatureShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("held-out set is empty")]
    EmptyHeldout,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("token stream has fewer than two tokens")]
    EmptyStream,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: &std::path::Path, err: csv::Error) -> Self {
        match err.into_kind() {
            csv::ErrorKind::Io(source) => Error::io(path, source),
            other => Error::Format(format!("{}: {other:?}", path.display())),
        }
    }
}
