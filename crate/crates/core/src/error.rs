use thiserror::Error;

/// Errors raised across lifting, simulation, fitting and bound computation.
#[derive(Debug, Error)]
pub enum KoopmanError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("evaluation failed at x = {x:?}: {reason}")]
    Domain { x: Vec<f64>, reason: String },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: String, index: usize },

    #[error("dictionary does not span the lifted dynamics (residual {residual:e}); out-of-span terms: {offending:?}")]
    InvariantSubspaceViolation {
        residual: f64,
        offending: Vec<String>,
    },

    #[error("simulation '{label}' diverged at step {step}")]
    Divergence { label: String, step: usize },

    #[error("dictionary has no state selector, cannot build the output matrix")]
    MissingStateSelector,

    #[error("symbolic operation needs an all-monomial dictionary")]
    NotPolynomial,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid is empty")]
    EmptyGrid,

    #[error("every grid point diverged: alphas {alphas:?}")]
    AllDiverged { alphas: Vec<f64> },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, KoopmanError>;

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(KoopmanError::DimensionMismatch {
            what: what.to_string(),
            expected,
            got,
        })
    }
}

pub(crate) fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(index) => Err(KoopmanError::NonFinite {
            what: what.to_string(),
            index,
        }),
    }
}
