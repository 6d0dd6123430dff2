//! Crate-wide error type.

/// Errors produced by this crate.
///
/// The three leading variants mirror the failure categories used throughout
/// the operation contracts: bad static configuration, bad runtime input, and
/// violated caller contracts.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// Non-finite losses or gradients during optimization.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml encode error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// True for errors a user can fix by editing the configuration.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::InvalidConfig(_) | Error::TomlDe(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
