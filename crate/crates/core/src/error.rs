use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("quadrature did not converge on [{lower}, {upper}]: estimate {estimate:e}, error estimate {error_estimate:e}")]
    QuadratureFailure {
        lower: f64,
        upper: f64,
        estimate: f64,
        error_estimate: f64,
    },

    #[error("non-finite value while evaluating {0}")]
    NonFinite(&'static str),

    #[error("no sign change of {what} on [{lower}, {upper}]")]
    BracketFailure {
        what: &'static str,
        lower: f64,
        upper: f64,
    },

    #[error("root search for {0} did not converge")]
    RootNotConverged(&'static str),

    #[error("{what} is only defined for {requirement} (D = {noise}, D* = {critical})")]
    Domain {
        what: &'static str,
        requirement: &'static str,
        noise: f64,
        critical: f64,
    },

    #[error("u = {u} is not a stationary order parameter (residual {residual:e} > {tolerance:e})")]
    NotStationary { u: f64, residual: f64, tolerance: f64 },

    #[error("special function {0} did not converge")]
    SpecialFunction(&'static str),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("density has zero mass")]
    ZeroMass,

    #[error("density has mass {0}, expected 1")]
    NotNormalized(f64),

    #[error("density is negative or not finite at cell {cell} (value {value:e})")]
    InvalidDensity { cell: usize, value: f64 },

    #[error("log-gradient undefined: density vanishes at interior cell {0}")]
    NonPositiveCell(usize),

    #[error("reference density underflows at cell {cell} where f = {value:e}; enlarge the truncation radius or shrink it consistently")]
    SupportMismatch { cell: usize, value: f64 },

    #[error("perturbation violates the mean-zero constraint: integral of g f = {0:e}")]
    MeanConstraint(f64),

    #[error("linear solve failed: zero pivot at row {0}")]
    LinearSolve(usize),

    #[error("positivity lost at t = {time}: f[{cell}] = {value:e}")]
    PositivityViolation {
        time: f64,
        cell: usize,
        value: f64,
        state: Vec<f64>,
    },

    #[error("the non-local scalar product is not positive definite (metric eigenvalue {0:e})")]
    IndefiniteMetric(f64),

    #[error("eigen-solver failed: {0}")]
    Eigen(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Errors caused by the request rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParams(_)
                | Error::InvalidConfig(_)
                | Error::Geometry(_)
                | Error::Domain { .. }
                | Error::NotStationary { .. }
        )
    }
}
