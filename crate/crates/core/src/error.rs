//! Error type shared by every module in the crate.
//!
//! The variants map one-to-one onto the process exit codes used by the CLI:
//! configuration/contract problems (exit 2), numeric aborts (exit 3), and
//! partial grid failures (exit 4). I/O and parse errors are configuration
//! problems from the caller's point of view.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a documented precondition (bad shape, bad range,
    /// missing field). Always a bug in the calling code or config, never data.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An input file or config could not be read, parsed, or validated.
    #[error("config error: {0}")]
    Config(String),

    /// A binary or text payload did not match its declared format.
    #[error("format error: {0}")]
    Format(String),

    /// Cross-field inconsistency in otherwise well-formed data
    /// (e.g. image and label counts disagree).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A non-finite value appeared where the math requires finite numbers.
    /// Carries enough context (op / variable / iteration) to locate the blow-up.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Some grid cells failed while others succeeded.
    #[error("grid finished with {failed} of {total} cells failed")]
    GridPartial { failed: usize, total: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            Error::GridPartial { .. } => 4,
            _ => 2,
        }
    }

    pub(crate) fn contract(msg: String) -> Self {
        Error::Contract(msg)
    }

    pub(crate) fn numeric(msg: String) -> Self {
        Error::Numeric(msg)
    }
}
