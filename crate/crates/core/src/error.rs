use thiserror::Error;

use crate::smc::GenerationRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("innovation covariance numerically singular at stage {stage} (condition estimate {condition:.3e})")]
    SingularInnovation { stage: usize, condition: f64 },

    #[error("predicted covariance singular in smoother gain at stage {stage}")]
    SingularGain { stage: usize },

    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:.3e}, max {max_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64, max_eigenvalue: f64 },

    #[error("problem size {size} exceeds the oracle limit {limit}")]
    SizeGuard { size: usize, limit: usize },

    #[error("training set too small: need more than {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("rank-deficient design matrix; deficient columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("need at least 2 held-out residuals, got {0}")]
    TooFewResiduals(usize),

    #[error("empty particle cloud")]
    EmptyCloud,

    #[error("total weight degeneracy at generation {generation}")]
    Degenerate {
        generation: usize,
        trace: Vec<GenerationRecord>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
