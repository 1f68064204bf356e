use thiserror::Error;

pub type Result<T, E = SisError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SisError {
    /// Malformed call arguments (length mismatch, negative parameter, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A model coefficient violates one of the standing bounds.
    #[error("validation error: {field} violates the {bound} bound: {message}")]
    Validation { field: &'static str, bound: &'static str, message: String },

    /// Hypotheses of an existence result are not met by the coefficients.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    Convergence { what: &'static str, iterations: usize, residual: f64 },

    #[error("spectral bound does not cross zero along the ray up to theta = {cap:e}")]
    NoSignChange { cap: f64 },

    #[error("positivity violated at step {step} (t = {t}): min v = {min_v:.3e} below -1e-12 P*; reduce dt")]
    Positivity { step: usize, t: f64, min_v: f64 },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SisError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        SisError::Input(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        SisError::Precondition(msg.into())
    }

    /// True when the failure is a solver outcome rather than a bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            SisError::Convergence { .. }
                | SisError::NoSignChange { .. }
                | SisError::Positivity { .. }
                | SisError::Internal(_)
        )
    }
}
