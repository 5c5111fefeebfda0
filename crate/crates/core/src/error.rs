use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DsboError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("topology generation failed: no connected graph after {attempts} attempts")]
    TopologyGenerationFailed { attempts: usize },
    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),
    #[error("inner solve failed after {iterations} iterations (residual {residual:e})")]
    InnerSolveFailed { residual: f64, iterations: usize },
    #[error("STORM estimator requires a re-evaluated direction after the first step")]
    MissingReeval,
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = DsboError> = std::result::Result<T, E>;
