use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cost for feature {feature}: {reason}")]
    InvalidCost { feature: usize, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance model rejected: {0}")]
    InvalidModel(String),

    #[error("knockoff construction infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("column {0} is constant and cannot be standardized")]
    DegenerateColumn(usize),

    #[error("{failed} of {total} replicates failed, above the 5% budget")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
