use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Graph construction or graph-operation failure.
    #[error("graph: {0}")]
    Graph(String),

    /// Dimension bookkeeping mismatch.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Problem data violates a structural invariant.
    #[error("validation failed: {0}")]
    Validation(String),

    /// A numerical routine could not complete (singularity, failed factorization).
    #[error("numerical: {0}")]
    Numerical(String),

    /// Instance-size guardrail tripped; pass `force` to override.
    #[error("guardrail: {0}")]
    Guardrail(String),

    /// File parsing / serialization failure.
    #[error("io: {0}")]
    Io(String),
}
