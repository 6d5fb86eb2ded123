use thiserror::Error;

/// Errors produced by channel generation, estimation and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A non-finite value appeared in the AMP sweep; `line` names the update step.
    #[error("non-finite value in iteration {iteration} at update line {line}: {detail}")]
    NonFinite {
        iteration: usize,
        line: u8,
        detail: String,
    },

    #[error("zero-norm reference signal")]
    ZeroSignal,

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("run aborted: {0}")]
    Aborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
