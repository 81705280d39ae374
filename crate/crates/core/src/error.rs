use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dim { op: &'static str, detail: String },

    #[error("non-finite value produced at tape node {node}")]
    NonFiniteNode { node: usize },

    #[error("non-finite value in RK4 stage k{stage}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFiniteStage { stage: usize, step: Option<usize> },

    #[error("lyapunov equation is singular: eigenvalue sum zero")]
    EigenvalueSumZero,

    #[error("matrix is singular: {0}")]
    Singular(&'static str),

    #[error("not stabilizable")]
    NotStabilizable,

    #[error("riccati iteration did not converge within {0} steps")]
    NoConvergence(usize),

    #[error("not an equilibrium: |F(0)| = {0:e}")]
    NotEquilibrium(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("decay fit needs strictly positive norms (sample {0} is {1:e})")]
    NonPositiveNorm(usize, f64),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Dim { op, detail: detail.into() })
}
