use thiserror::Error;

/// Errors raised by the library. The CLI maps the variants onto exit codes.
#[derive(Debug, Error)]
pub enum VqlError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("no shared span between premises: {0}")]
    NoAnchor(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = VqlError> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> VqlError {
    VqlError::Contract(msg.into())
}

pub(crate) fn input(msg: impl Into<String>) -> VqlError {
    VqlError::Input(msg.into())
}
