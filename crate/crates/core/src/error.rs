use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("integration failed at t = {t}: step size underflow (h = {h:e})")]
    IntegrationFailure { t: f64, h: f64 },

    #[error("integration exceeded {steps} steps before reaching t = {target} (last t = {t})")]
    TooManySteps { steps: usize, t: f64, target: f64 },

    #[error("non-finite field value {context}")]
    NonFiniteField { context: String },

    #[error("jacobian inconsistent with field: max relative deviation {max_deviation:e}")]
    JacobianMismatch { max_deviation: f64 },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("invalid frequency: {0}")]
    InvalidFrequency(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("newton iteration did not converge in {iterations} iterations (residuals: {history:?})")]
    NewtonFailure { iterations: usize, history: Vec<f64> },

    #[error("converged orbit is degenerate: {0}")]
    DegenerateOrbit(String),

    #[error("multiplier-1 eigenspace has dimension {found}, expected 2")]
    DefectiveMultiplier { found: usize },

    #[error("adjoint normalization system is singular (condition {condition:e})")]
    NormalizationFailure { condition: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("second-order locking curve requested but the forcing is not degenerate (max |g1| = {max_g1:e})")]
    WrongBranch { max_g1: f64 },

    #[error("detuning {delta} lies outside the open range ({lower}, {upper})")]
    NoLockingDetuning { delta: f64, lower: f64, upper: f64 },

    #[error("detuning {delta} is within {epsilon} of the singular value {singular}")]
    NearSingular { delta: f64, singular: f64, epsilon: f64 },

    #[error("newton refinement of a critical point near psi = {psi} did not converge")]
    CriticalPointFailure { psi: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
