use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EscoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EscoError {
    #[error("degenerate vector: zero norm")]
    DegenerateVector,

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("label index {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("prompt bank out of sync: {prompts} prompts, {classes} classifier rows, {types} registered types")]
    PromptBankOutOfSync {
        prompts: usize,
        classes: usize,
        types: usize,
    },

    #[error("unknown label {0}")]
    UnknownLabel(usize),

    #[error("label {0} is already registered")]
    TypeOverlap(usize),

    #[error("model has no registered types")]
    NoTypes,

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("invalid count: {0}")]
    InvalidCount(String),

    #[error("type {0} has no training samples")]
    NoTrainingSamples(usize),

    #[error("empty memory bucket for label {0}")]
    EmptyBucket(usize),

    #[error("missing prototype for label {0}")]
    MissingPrototype(usize),

    #[error("degenerate prototype for label {0}: zero vector")]
    DegeneratePrototype(usize),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{types} types cannot fill {tasks} tasks")]
    TooFewTypes { types: usize, tasks: usize },

    #[error("label {label} has {count} samples; at least 3 are needed for a stratified split")]
    TypeTooSmall { label: usize, count: usize },

    #[error("task index {k} out of range 1..={n}")]
    TaskOutOfRange { k: usize, n: usize },

    #[error("expected task {expected}, got task {got}")]
    TaskOrder { expected: usize, got: usize },

    #[error("metric matrix entry R[{row}][{col}] is missing")]
    MissingEntry { row: usize, col: usize },

    #[error("ragged input: {0}")]
    Ragged(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at task {task}, epoch {epoch}, batch {batch}: loss terms {terms}")]
    Diverged {
        task: usize,
        epoch: usize,
        batch: usize,
        terms: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl EscoError {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        EscoError::ShapeMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EscoError::Io {
            path: path.into(),
            source,
        }
    }
}
