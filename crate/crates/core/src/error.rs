use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("finite-difference oracle invalid: {0}")]
    OracleInvalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("channel length {length} exceeds cyclic prefix length {cp_len}")]
    ChannelTooLong { length: usize, cp_len: usize },

    #[error("non-finite loss at step {step}: {dump}")]
    NonFinite { step: usize, dump: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// Process exit code for the CLI: 2 for configuration problems, 3 for
    /// numeric failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ChannelTooLong { .. } => 2,
            Error::NonFinite { .. } | Error::Degenerate(_) | Error::OracleInvalid(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
