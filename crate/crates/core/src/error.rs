//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible for the attempted operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An operation produced or was given a NaN/Inf value.
    #[error("non-finite value in {op}")]
    NonFinite { op: &'static str },

    /// Invalid argument to a numeric operation (empty softmax input,
    /// log of a non-positive value, non-scalar loss, ...).
    #[error("invalid operand for {op}: {msg}")]
    InvalidOperand { op: &'static str, msg: String },

    /// Training loss diverged (NaN/Inf detected mid-run).
    #[error("training diverged at {phase} iteration {iteration}: {msg}")]
    Diverged {
        phase: &'static str,
        iteration: u64,
        msg: String,
    },

    /// Mini-language syntax error.
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },

    /// Malformed input data (corpus files, serialized ASTs, vocabularies).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Malformed or inconsistent configuration.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Checkpoint file cannot be read or fails validation.
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    /// Training phases requested out of order.
    #[error("phase ordering violation: {0}")]
    PhaseOrder(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Coarse category used by the CLI to pick a process exit code.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_) | Error::PhaseOrder(_) => ErrorCategory::Usage,
            Error::NonFinite { .. } | Error::Diverged { .. } => ErrorCategory::Numeric,
            _ => ErrorCategory::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numeric,
}
