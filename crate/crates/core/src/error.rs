use thiserror::Error;

/// Errors produced by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum PatError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid time axis: {0}")]
    InvalidAxis(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("anisotropic grid: dx = {dx}, dy = {dy} (square pixels required)")]
    AnisotropicGrid { dx: f64, dy: f64 },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("iteration diverged at step {iteration} with step size {step}: objective {objective:.3e} exceeds 10x initial {initial:.3e}")]
    Divergence {
        iteration: usize,
        step: f64,
        objective: f64,
        initial: f64,
    },

    #[error("step size {step} outside (0, 1/|A|^2) with |A| estimated as {norm}")]
    StepSize { step: f64, norm: f64 },

    #[error("combinatorial budget exceeded: {supports} supports > {budget}")]
    Budget { supports: u128, budget: u128 },

    #[error("training diverged in epoch {epoch}: non-finite loss")]
    TrainingDiverged { epoch: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PatError> = std::result::Result<T, E>;

pub(crate) fn shape_err(expected: impl ToString, actual: impl ToString) -> PatError {
    PatError::Shape {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
