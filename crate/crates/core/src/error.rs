use thiserror::Error;

/// Errors reported by the solver, the policy layer and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("transaction cost xi = {xi:e} does not exceed the critical value {xi_bar:e}")]
    BelowCriticalCost { xi: f64, xi_bar: f64 },

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("insolvent position: {0}")]
    Insolvent(String),
}

pub type Result<T> = std::result::Result<T, Error>;
