use thiserror::Error;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid ranks: {0}")]
    InvalidRanks(String),

    #[error("{sites} sites exceeds the dense limit of {limit}")]
    TooLarge { sites: usize, limit: usize },

    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    #[error("invalid POVM: {0}")]
    InvalidPovm(String),

    #[error("outcome index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("operator is not Hermitian (deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("negative probability {value:.3e} beyond clamp tolerance")]
    NegativeProbability { value: f64 },

    #[error("degenerate trace {0:.3e}; cannot normalize")]
    DegenerateTrace(f64),

    #[error("probability mass {0} deviates from one")]
    ProbabilityMass(f64),

    #[error("non-finite loss at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TomoError {
    /// Errors caused by the numerics rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TomoError::NegativeProbability { .. }
                | TomoError::DegenerateTrace(_)
                | TomoError::NonFinite { .. }
                | TomoError::Numerical(_)
                | TomoError::ProbabilityMass(_)
                | TomoError::Sampling(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, TomoError>;
