use std::fmt;

/// Errors surfaced by plan construction, generation, and the oracles.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad arguments: mismatched fields, out-of-range symbols, malformed programs.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("seed has {got} bits but {expected} are required")]
    SeedLength { expected: usize, got: usize },
    /// A request that is well formed but exceeds a configured budget
    /// (enumeration cap, DP window, symbol precision).
    #[error("refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn usage(msg: impl fmt::Display) -> Error {
    Error::Usage(msg.to_string())
}

pub(crate) fn refused(msg: impl fmt::Display) -> Error {
    Error::Refused(msg.to_string())
}

pub(crate) fn check_seed(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::SeedLength { expected, got })
    }
}
