use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("distance is undefined for an empty region")]
    DistanceUndefined,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("incomplete configuration: {0}")]
    IncompleteConfiguration(String),

    #[error("state space of {states} configurations exceeds the cap of {cap}")]
    StateSpaceTooLarge { states: u128, cap: u128 },

    #[error("non-permissive instance: {0}")]
    NonPermissive(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("function does not match the state space ({0})")]
    StateSpaceMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Number of configurations `q^n`, saturating instead of overflowing.
pub fn state_count(q: usize, n: usize) -> u128 {
    (q as u128).checked_pow(n as u32).unwrap_or(u128::MAX)
}

pub(crate) fn check_cap(q: usize, n: usize, cap: u128) -> Result<usize> {
    let states = state_count(q, n);
    if states > cap || states > usize::MAX as u128 {
        return Err(Error::StateSpaceTooLarge { states, cap });
    }
    Ok(states as usize)
}
