use thiserror::Error;

/// Errors produced by the model, estimators and file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// `B = I - sum(rho_i W_i)` is (numerically) singular.
    #[error("B = I - sum(rho_i W_i) is singular at rho = {rho:?} (log|det B| = {log_abs_det})")]
    SingularB { rho: Vec<f64>, log_abs_det: f64 },

    #[error("rank deficient system: {0}")]
    RankDeficient(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("maximizer failed: {reason} after {} evaluations", trajectory.len())]
    MaximizerFailure {
        reason: String,
        /// Every point the maximizer evaluated, in order.
        trajectory: Vec<Vec<f64>>,
    },

    #[error("chain {chain} diverged at iteration {iteration}: {reason}")]
    Diverged {
        chain: usize,
        iteration: usize,
        reason: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularB { .. }
                | Error::RankDeficient(_)
                | Error::NonConvergence(_)
                | Error::MaximizerFailure { .. }
                | Error::Diverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
