use std::io;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, count or range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced NaN/Inf or otherwise diverged.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Input data has no usable structure (e.g. all rows identical).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A generator could not satisfy its constraints.
    #[error("generation failed: {0}")]
    Generation(String),

    /// A binary file is truncated or does not follow its layout.
    #[error("malformed {kind}: {msg}")]
    Malformed { kind: &'static str, msg: String },

    /// Configuration rejected by validation.
    #[error("config error: {0}")]
    Config(String),

    /// Text input failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
