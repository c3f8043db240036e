use thiserror::Error;

/// Errors raised anywhere in the reconciliation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hierarchy: {0}")]
    Structure(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(
        "{what} is not positive definite (smallest eigenvalue {min_eigenvalue:e}, floor {floor:e})"
    )]
    NotPositiveDefinite {
        what: String,
        min_eigenvalue: f64,
        floor: f64,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("degenerate correlation: series {0} has zero variance")]
    DegenerateCorrelation(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical kernels (as opposed to bad input).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Singular(_)
                | Error::DegenerateCorrelation(_)
        )
    }

    pub(crate) fn dimension(
        context: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
