//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by dataset construction, policy evaluation, objective
/// assembly, training, and the exact-enumeration oracle.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("vocabulary too small for task `{task}`: need at least {needed} content tokens, have {have}")]
    VocabularyTooSmall {
        task: String,
        needed: usize,
        have: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset filtering removed every question (easy_threshold={easy_threshold}, unsolved_cap={unsolved_cap})")]
    EmptyDataset {
        easy_threshold: f64,
        unsolved_cap: f64,
    },

    #[error("non-finite policy parameters or logits at context {0:?}")]
    NonFiniteParameters(Vec<usize>),

    #[error("group too small for advantage computation: G={0}, need G >= 2")]
    GroupTooSmall(usize),

    #[error("trajectory is missing teacher log-probabilities (teacher scoring required by the objective)")]
    MissingTeacherScores,

    #[error("estimator `{estimator}` is not usable with `{objective}`: {reason}")]
    EstimatorNotAllowed {
        estimator: String,
        objective: String,
        reason: String,
    },

    #[error("invalid objective configuration: {0}")]
    InvalidObjective(String),

    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error("non-finite loss or gradient at step {step} (question group `{question_id}`): {detail}")]
    NonFiniteLoss {
        step: usize,
        question_id: String,
        detail: String,
    },

    #[error("enumeration budget exceeded: |V|^max_len = {required:.3e} sequences, budget {budget:.3e}")]
    BudgetExceeded { required: f64, budget: f64 },

    #[error("teacher pass rate {measured:.4} is below the required minimum {required:.4}")]
    WeakTeacher { measured: f64, required: f64 },

    #[error("checkpoint is incompatible: {0}")]
    IncompatibleCheckpoint(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed {what} (line {line}): {detail}")]
    MalformedFile {
        what: String,
        line: usize,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
