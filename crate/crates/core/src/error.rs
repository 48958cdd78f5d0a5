use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum StokesError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("interval [{t_a}, {t_b}] is not aligned to the fine step {fine_step}")]
    Alignment { t_a: f64, t_b: f64, fine_step: f64 },

    #[error("solver failure after {iterations} iterations (residual {residual:.3e}): {reason}")]
    Solver {
        reason: String,
        iterations: usize,
        residual: f64,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = StokesError> = std::result::Result<T, E>;

impl StokesError {
    pub fn config(msg: impl Into<String>) -> Self {
        StokesError::Config(msg.into())
    }

    pub fn solver(reason: impl Into<String>, iterations: usize, residual: f64) -> Self {
        StokesError::Solver {
            reason: reason.into(),
            iterations,
            residual,
        }
    }
}
