use thiserror::Error;

/// Errors raised by the shared domain types and elementwise measures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("cosine similarity undefined: both vectors are zero")]
    UndefinedSimilarity,
    #[error("invalid candidate pool: {0}")]
    InvalidPool(String),
}

impl CoreError {
    pub(crate) fn dims(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        CoreError::Dimension {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
