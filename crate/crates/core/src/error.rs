use thiserror::Error;

/// Errors produced anywhere in the extraction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A token or sequence that does not belong to the alphabet.
    #[error("input error: {0}")]
    Input(String),

    /// A model file could not be parsed.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// A structurally valid value that breaks a model invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller broke an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The oracle failed to answer (process died, protocol violation, ...).
    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
