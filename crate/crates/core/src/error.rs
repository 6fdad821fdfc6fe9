use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("function is not polynomially bounded: {0}")]
    GrowthViolation(String),

    #[error("particle cap of {cap} exceeded at t = {time}")]
    ParticleCap { cap: usize, time: f64 },

    #[error("all {replicas} replicas went extinct")]
    AllExtinct { replicas: usize },

    #[error("kernel arity {kernel} does not match expected {expected}")]
    ArityMismatch { kernel: usize, expected: usize },

    #[error("kernel dimension {kernel} does not match snapshot dimension {snapshot}")]
    DimMismatch { kernel: usize, snapshot: usize },

    #[error("naive evaluation needs {needed} kernel calls, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("arity {n} exceeds the configured cap {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("operation requires the {expected} regime, parameters are in the {actual} regime")]
    RegimeMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("kernel is not canonical (max slot average {residual:e})")]
    NotCanonical { residual: f64 },

    #[error("kernel must be declared symmetric")]
    NotSymmetric,

    #[error("operation needs a polynomial kernel: {0}")]
    NotPolynomial(String),

    #[error("quadrature did not reach tolerance {tol:e} (error estimate {estimate:e})")]
    QuadratureFailure { tol: f64, estimate: f64 },

    #[error("divergent integral: {0}")]
    Divergence(String),

    #[error("statistic undefined for an empty population")]
    ZeroCount,

    #[error("covariance matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by the request itself (bad config, parameters or
    /// kernel), as opposed to failures met while running it.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::GrowthViolation(_)
                | Error::ArityMismatch { .. }
                | Error::DimMismatch { .. }
                | Error::CapExceeded { .. }
                | Error::RegimeMismatch { .. }
                | Error::NotCanonical { .. }
                | Error::NotSymmetric
                | Error::NotPolynomial(_)
                | Error::Config(_)
        )
    }
}
