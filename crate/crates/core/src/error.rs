use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid generator: {0}")]
    Generator(String),

    #[error("quadrature did not converge (estimated error {estimate:.3e})")]
    Quadrature { estimate: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("integrator step size underflow at t = {t} ns; use a finer time grid")]
    StepSize { t: f64 },

    #[error("mixture classification failed: {reason} (overlap {overlap:.3})")]
    Classification { reason: String, overlap: f64 },

    #[error("correlation: {0}")]
    Correlation(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
