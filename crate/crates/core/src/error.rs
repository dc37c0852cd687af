use thiserror::Error;

/// Errors produced by the gmip toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("quantile at probability {0} is unbounded")]
    UnboundedQuantile(f64),

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("target mu = {target} is unreachable; achievable infimum is {infimum}")]
    Unreachable { target: f64, infimum: f64 },

    #[error(
        "covariance is numerically singular (smallest eigenvalue {min_eigenvalue:e}); \
         increase the ridge or the number of background samples"
    )]
    SingularCovariance { min_eigenvalue: f64 },

    #[error("leverage h = {0} >= 1; the design is degenerate for this query")]
    LeverageOverflow(f64),

    #[error("design matrix X^T X is singular")]
    SingularDesign,

    #[error("training diverged at iteration {iteration}: parameters are no longer finite")]
    Divergence { iteration: usize },

    #[error("trace parse error at byte offset {offset}: {reason}")]
    TraceParse { offset: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
