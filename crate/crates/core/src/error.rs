//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by graph evaluation and differentiation.
#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("expected {expected} inputs, got {got}")]
    InputShape { expected: usize, got: usize },
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("derivative order {order} unsupported (1..=3)")]
    UnsupportedOrder { order: usize },
    #[error("root index {index} out of range ({roots} roots)")]
    BadRoot { index: usize, roots: usize },
}

/// Errors raised by model construction and queries.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model weights contain non-finite values")]
    CorruptWeights,
    #[error("encoding mismatch: {0}")]
    Encoding(String),
}

/// Errors raised by dataset generation and the PIV surrogate.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("argument out of supported range: {0}")]
    Range(String),
    #[error("grid mismatch: {0}")]
    Shape(String),
}

/// Errors raised during training and loss evaluation.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Errors raised by file formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed {format} file: {detail}")]
    Malformed { format: &'static str, detail: String },
    #[error("unsupported {format} version: {found}")]
    Version { format: &'static str, found: String },
}

impl FormatError {
    pub fn malformed(format: &'static str, detail: impl Into<String>) -> Self {
        FormatError::Malformed {
            format,
            detail: detail.into(),
        }
    }
}
