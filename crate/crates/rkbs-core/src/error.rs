use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("parameter point kind does not match: {0}")]
    KindMismatch(&'static str),
    #[error("discrete index 0 reads no input coordinate (bias atom disabled)")]
    NegativeIndex,
    #[error("measure is not on the unit TV sphere: tv = {tv}")]
    NotUnitBall { tv: f64 },
    #[error("candidate grid has no admissible point")]
    EmptyGrid,
    #[error("active set exceeded the atom budget of {budget}")]
    AtomBudgetExceeded { budget: usize },
    #[error("interpolation infeasible: residual {residual:.3e} with lambda at {lambda:.3e}")]
    Infeasible { residual: f64, lambda: f64 },
    #[error("support size {support} exceeds the bound {bound}")]
    SupportBound { support: usize, bound: usize },
    #[error("unsupported basis for this operation: {0}")]
    UnsupportedBasis(&'static str),
    #[error("objective diverged: {objective:.6e} exceeds 10x initial {initial:.6e}")]
    DivergenceDetected { objective: f64, initial: f64 },
    #[error("instance exceeds oracle size caps: {0}")]
    CapExceeded(&'static str),
    #[error("invalid {context}: {message}")]
    Invalid {
        context: &'static str,
        message: String,
    },
    #[error("unsupported model format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
