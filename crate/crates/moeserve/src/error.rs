//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or parameters inconsistent with the model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The caller asked for something the current state does not allow
    /// (overlapping load, unmapping a range that is not loaded, evicting an
    /// adapter with in-flight requests, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Bad input data (profiles, manifests, traces).
    #[error("invalid input: {0}")]
    Input(String),

    /// Adapter manifest rejected.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// No free adapter slot.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// The physical page pool cannot satisfy a mapping request.
    #[error("allocation error: requested {requested} pages, {available} available")]
    PoolExhausted { requested: usize, available: usize },

    /// Access to a virtual slot that is not backed by physical pages.
    #[error("memory fault: layer {layer}, slot {slot}: {reason}")]
    MemoryFault {
        layer: usize,
        slot: usize,
        reason: String,
    },

    /// A verification run found a deviation from the merged-model oracle.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A state the code believed unreachable.
    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for usage/input problems, 3 for
    /// validation and resource failures, 4 for internal invariant violations.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_)
            | Error::Usage(_)
            | Error::Input(_)
            | Error::Manifest(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Capacity(_) | Error::PoolExhausted { .. } | Error::Validation(_) => 3,
            Error::MemoryFault { .. } | Error::Internal(_) => 4,
        }
    }
}
