use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("{which} Gram matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { which: &'static str, asymmetry: f64 },

    #[error("{which} matrix is not positive definite")]
    NotPositiveDefinite { which: &'static str },

    #[error("singular Gram matrix: linear solve failed")]
    SingularGram,

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("non-finite entry in form or load evaluation at t = {t}")]
    Evaluation { t: f64 },

    #[error("invalid subdivision: {0}")]
    Subdivision(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("matrix exponential out of numerical range (scaled norm {norm:.3e})")]
    NumericalRange { norm: f64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("tolerance not reached after {iterations} iterations (residual {residual:.3e})")]
    Tolerance { iterations: usize, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
