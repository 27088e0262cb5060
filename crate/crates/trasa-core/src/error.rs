//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape disagreement between tensor operands.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An index referred to a row, column, or item that does not exist.
    #[error("out of bounds: {0}")]
    Bounds(String),

    /// An operation was called in a way its contract forbids.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An object was used after it was consumed or before it was ready.
    #[error("invalid state: {0}")]
    State(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A configuration value is invalid or inconsistent.
    #[error("invalid config: {0}")]
    Config(String),

    /// Input data is unusable (empty, malformed beyond recovery, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A file did not match the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// Training aborted because the loss became non-finite.
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    /// An internal invariant failed; indicates a bug, not bad input.
    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
