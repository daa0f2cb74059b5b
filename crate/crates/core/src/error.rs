use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{family}: natural parameter {theta} outside the admissible domain")]
    Domain { family: &'static str, theta: f64 },

    #[error("{family}: observation {x} outside the support or mean-parameter domain")]
    Support { family: &'static str, x: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("non-finite matrix entry")]
    NonFinite,

    #[error("SVD failed to converge on a {0}x{1} matrix")]
    Svd(usize, usize),

    #[error("power iteration did not converge after {iterations} iterations")]
    PowerIteration { iterations: usize },

    #[error("{what} did not converge: {detail}")]
    Convergence { what: &'static str, detail: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("infeasible test-set generation: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
