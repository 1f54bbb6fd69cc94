//! Shared error type for the whole pipeline.
//!
//! Every error maps onto one of the CLI exit codes: 2 for argument/config
//! problems, 3 for data/schema problems, 4 for numeric divergence.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's arguments was violated.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Configuration file could not be resolved or validated.
    #[error("config error: {0}")]
    Config(String),

    /// A (epoch, task, point) triple was recorded twice.
    #[error("duplicate record for epoch {epoch}, task {task}, point {point}")]
    DuplicateRecord { epoch: u32, task: usize, point: usize },

    /// A persisted file failed to parse; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Parsed data contradicts its own header or a sibling file.
    #[error("schema error: {0}")]
    Schema(String),

    /// The dynamics log lacks a record the computation needs.
    #[error("incomplete dynamics: missing epoch {epoch} for task {task}, point {point}")]
    IncompleteData { epoch: u32, task: usize, point: usize },

    /// Metric denominator is zero, e.g. F1 with tp+fp+fn = 0.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A task's labels are single-class where both classes are required.
    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite loss")]
    Divergence { epoch: u32, batch: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 0 success, 2 argument/config,
    /// 3 data/schema, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) => 2,
            Error::Divergence { .. } => 4,
            _ => 3,
        }
    }
}
