use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the domain of chart {chart}")]
    Domain { chart: &'static str, point: Vec<f64> },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("integrator failed at t = {t:e} with step {step:e} after {steps} steps: {reason}")]
    Integrator { t: f64, step: f64, steps: usize, reason: String },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("no convergence after {restarts} restarts (worst residual {residual:e})")]
    Stagnation { restarts: usize, residual: f64 },

    #[error("contour refused: eigenvalue at distance {distance:e} from the contour (minimum {minimum:e})")]
    NearContour { distance: f64, minimum: f64 },

    #[error("refused: {0}")]
    Refused(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
