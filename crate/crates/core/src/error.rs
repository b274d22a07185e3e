use thiserror::Error;

/// Errors produced by the library.
///
/// The CLI maps these onto its exit-code contract: configuration,
/// contract, and domain errors exit with code 2, non-finite numeric
/// failures with code 3, everything else with code 1.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's precondition (length mismatch,
    /// empty tensor, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration (bad step count, out-of-range knob,
    /// unknown preset, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An input outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A NaN or infinity showed up in the evolving state.
    #[error("numeric failure: {0}")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn non_finite(msg: impl Into<String>) -> Self {
        Error::NonFinite(msg.into())
    }
}
