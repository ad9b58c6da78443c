use thiserror::Error;

/// Loads at or above `1 - STABILITY_MARGIN` are rejected as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("non-finite integrand value {value} at q = {q}")]
    Evaluation { q: f64, value: f64 },
    #[error("unstable system: load {rho} is not below 1")]
    Instability { rho: f64 },
    #[error("quadrature did not converge: estimate {estimate}, relative change {change} after doubling panels")]
    Accuracy { estimate: f64, change: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("inadequate run: {0}")]
    InadequateRun(String),
    #[error("no feasible design: {0}")]
    Infeasible(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_stable(rho: f64) -> Result<()> {
    if rho.is_finite() && rho < 1.0 - STABILITY_MARGIN {
        Ok(())
    } else {
        Err(Error::Instability { rho })
    }
}
