use thiserror::Error;

/// Errors surfaced by samplers and model primitives.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A chain or run configuration violated its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A dataset violated its invariants (bad counts, non-positive sums, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// Numerical failure inside a running chain, located by iteration and bucket.
    #[error("numerical failure at iteration {iteration}, bucket {bucket}: {message}")]
    Numerical {
        iteration: u64,
        bucket: u64,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
