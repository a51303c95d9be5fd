//! Shared error types for the pipeline.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    /// A payload or artifact violated its schema/invariants. `path` names the
    /// offending field (dotted), not a filesystem path.
    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },

    /// Candidate produced zero extractable claims; distinct from accuracy 0.
    #[error("degenerate candidate: empty claim list")]
    DegenerateCandidate,

    /// Ground truth has zero evaluable points/decisions.
    #[error("degenerate ground truth: zero evaluable items")]
    DegenerateGroundTruth,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Transport-level backend failure; retryable.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    /// Model output failed stage schema validation after retries.
    #[error("backend schema error: {0}")]
    BackendSchemaError(String),

    /// Mock request outside the script with no generative rule.
    #[error("mock script miss: {0}")]
    MockScriptMiss(String),

    #[error("ground-truth construction failed for {meeting}: {message}")]
    GtConstruction { meeting: String, message: String },

    /// A filter produced no rows to aggregate.
    #[error("empty slice: {0}")]
    EmptySlice(String),

    #[error("plan error: {0}")]
    PlanError(String),

    #[error("config error: {0}")]
    Config(String),
}

impl EvalError {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        EvalError::SchemaViolation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        EvalError::Json {
            path: path.into(),
            source,
        }
    }
}
