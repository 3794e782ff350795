//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. Variants are
//! grouped by the subsystem that raises them so callers can match coarsely
//! without caring about the exact failure string.

use thiserror::Error;

/// Unified error type for the crate.
#[derive(Error, Debug)]
pub enum Error {
    /// Malformed or inconsistent domain data (function codes, head ids,
    /// geometry, subQAF records).
    #[error("schema error: {0}")]
    Schema(String),

    /// Activation dump reading/writing problems: manifest/payload mismatch,
    /// bad offsets, truncated payloads.
    #[error("activation store error: {0}")]
    Store(String),

    /// Desk-model construction or execution failures (infeasible planting,
    /// unknown prompt tokens, geometry the channel layout cannot host).
    #[error("desk model error: {0}")]
    Desk(String),

    /// Probe dataset construction or training failures (too few positives,
    /// empty splits, dimension mismatches).
    #[error("probing error: {0}")]
    Probe(String),

    /// Statistical analysis failures (zero-variance inputs, empty samples).
    #[error("analysis error: {0}")]
    Analysis(String),

    /// Invalid intervention requests (empty head sets, unknown heads,
    /// missing patch sources or steering directions).
    #[error("intervention error: {0}")]
    Intervention(String),

    /// Text-metric or judge failures.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Experiment configuration or orchestration failures.
    #[error("experiment error: {0}")]
    Experiment(String),

    /// An external endpoint (token selector, judge, embedder) misbehaved
    /// after all retries were exhausted.
    #[error("endpoint error: {0}")]
    Endpoint(String),

    /// Filesystem problems, annotated with the path that caused them.
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization problems.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach a path to an I/O error.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
