use thiserror::Error;

/// Errors raised across the sampling library.
#[derive(Debug, Error)]
pub enum LgmError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error(
        "covariance is not positive semidefinite (eigenvalue {eigenvalue:e}, largest {largest:e})"
    )]
    NotPositiveSemidefinite { eigenvalue: f64, largest: f64 },
    #[error("covariance must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("invalid step size {0}; must be positive and finite")]
    InvalidStepSize(f64),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid hyperparameter `{name}` = {value}")]
    InvalidHyperparameter { name: &'static str, value: f64 },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("state has mass along a null direction of the prior covariance (component {index})")]
    PriorSingularState { index: usize },
    #[error("initial state has non-finite log-likelihood or gradient")]
    NonFiniteInitialState,
    #[error("burn-in of {0} iterations is too short; need at least 100")]
    BurnInTooShort(usize),
    #[error("series too short: need at least {needed} points, got {found}")]
    SeriesTooShort { needed: usize, found: usize },
    #[error("transition matrix is not ergodic (spectral gap {0:e})")]
    NotErgodic(f64),
    #[error("auxiliary quadrature did not converge (max change {0:e})")]
    QuadratureNonConvergence(f64),
    #[error("linear solve failed: {0}")]
    Singular(&'static str),
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = LgmError> = std::result::Result<T, E>;
