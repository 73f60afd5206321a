use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("unidirectionality violated at {location}: value {value:e}")]
    UnidirectionalityViolation { location: String, value: f64 },

    #[error("no sign change on bracket: {0}")]
    Bracket(String),

    #[error("eigensolver failure: {0}")]
    Solver(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("outside domain of definition: {0}")]
    Domain(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("tail not resolved: |eta| near q=L is {tail:e} against amplitude {amplitude:e}")]
    TailNotResolved { tail: f64, amplitude: f64 },

    #[error("decay fit rejected: {0}")]
    Fit(String),

    #[error("precondition failed: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, WaveError>;
