use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("inverse is unbounded: evaluator stays below {target} (last probe {last_probe})")]
    UnboundedInverse { target: f64, last_probe: f64 },

    #[error("invalid N-function: {0}")]
    InvalidNFunction(String),

    #[error("grid has no interior nodes")]
    EmptyDomain,

    #[error("invalid grid specification: {0}")]
    InvalidGrid(String),

    #[error("invalid density at node {node}: {value}")]
    InvalidDensity { node: usize, value: f64 },

    #[error("{what} did not converge (best bracket [{lower}, {upper}])")]
    ConvergenceFailure { what: String, lower: f64, upper: f64 },

    #[error("operator is numerically singular or indefinite ({0}); route the solve through the approximation ladder")]
    NearSingular(String),

    #[error("measure is supercritical: kappa = {kappa} exceeds 1")]
    SupercriticalMeasure { kappa: f64 },

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("no positive solution: {0}")]
    NoSolution(String),

    #[error("constants invalid: inequality `{inequality}` fails (lhs {lhs}, rhs {rhs}, probe {probe})")]
    ConstantsInvalid { inequality: String, lhs: f64, rhs: f64, probe: usize },

    #[error("ultracontractivity profile diverges: {0}")]
    DivergentProfile(String),

    #[error("theorem violation: {0}")]
    TheoremViolation(String),

    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),
}
