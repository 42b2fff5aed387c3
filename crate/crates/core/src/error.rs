use thiserror::Error;

/// Errors produced by the numerical library and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("singular node at t = {t}: {reason}")]
    SingularNode { t: f64, reason: String },

    #[error("covariance factorization failed after jitter (n = {n}, max diagonal = {max_diag:e}, min diagonal = {min_diag:e})")]
    Factorization { n: usize, max_diag: f64, min_diag: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("assumption check failed: {0}")]
    Assumption(String),

    #[error("all {0} samples were excluded")]
    AllExcluded(usize),

    #[error("{excluded} of {n} samples excluded, above the budget of {budget}")]
    ExclusionBudget { excluded: usize, n: usize, budget: usize },

    #[error("quadrature did not converge (estimate {estimate:e}, error {error:e})")]
    Quadrature { estimate: f64, error: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Samples failing with these errors are dropped and counted rather than aborting a run.
    pub fn is_per_sample(&self) -> bool {
        matches!(self, Error::DegenerateSample(_) | Error::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
