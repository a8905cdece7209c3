use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("expression error at column {column}: {message}")]
    Expression { column: usize, message: String },

    #[error("equilibrium residual {residual:e} exceeds tolerance {tolerance:e}")]
    NotEquilibrium { residual: f64, tolerance: f64 },

    #[error("linearization is not Hurwitz: eigenvalue {re} + {im}j has non-negative real part")]
    NotHurwitz { re: f64, im: f64 },

    #[error("linearization is not diagonalizable: eigenvector condition number {condition:e}")]
    NotDiagonalizable { condition: f64 },

    #[error("eigendecomposition did not converge")]
    EigenFailure,

    #[error("singular frame: condition number {condition:e} exceeds {threshold:e}")]
    SingularFrame { condition: f64, threshold: f64 },

    #[error("eigenfunction magnitude {magnitude:e} is below floor {floor:e}")]
    BelowFloor { magnitude: f64, floor: f64 },

    #[error("field evaluation failed near {point:?}: {reason}")]
    Evaluation { point: Vec<f64>, reason: String },

    #[error("eigenfunction estimate at {point:?} ended with status {status}")]
    NotConverged { point: Vec<f64>, status: String },

    #[error("trajectory diverged at t = {t}")]
    Diverged { t: f64 },

    #[error("step size underflow at t = {t}")]
    StepFailure { t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
