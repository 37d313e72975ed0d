use thiserror::Error;

/// Errors raised by the solvers, simulators and front end.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },

    #[error("closed-form equilibrium is not all-interior (miner {miner}, demand {demand})")]
    NotAllInterior { miner: usize, demand: f64 },

    #[error("closed-form equilibrium requires {0}")]
    ClosedFormUnsupported(&'static str),

    #[error("best-response iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("equilibrium depends on the start point (max gap {gap:e})")]
    MultipleEquilibria { gap: f64 },

    #[error("infeasible market: {0}")]
    InfeasibleMarket(String),

    #[error("no proof-of-work solution within {attempts} attempts")]
    NoSolutionWithinBudget { attempts: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Domain failures are properties of the economic instance rather than
    /// of how the program was invoked.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::NotAllInterior { .. }
                | Error::ClosedFormUnsupported(_)
                | Error::NotConverged { .. }
                | Error::MultipleEquilibria { .. }
                | Error::InfeasibleMarket(_)
                | Error::NoSolutionWithinBudget { .. }
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
