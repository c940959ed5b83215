use thiserror::Error;

use crate::market::FeasibilityReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// A one-dimensional root or minimum could not be bracketed.
    #[error("convergence error: {0}")]
    Convergence(String),

    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("model is infeasible: {}", .0.summary())]
    InfeasibleModel(Box<FeasibilityReport>),

    #[error("solver did not converge after {iterations} iterations (projected gradient {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("dual objective unbounded above ({value:.3e}); possible qualification failure")]
    UnboundedDual { value: f64 },

    #[error("no interior minimum of v(y) + xy found for y in [{lo:e}, {hi:e}]")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("dimension guard: {0}")]
    DimensionGuard(String),

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("outside explicit-solution regime: {0}")]
    Regime(String),

    #[error("budget equation unsolvable: {0}")]
    Budget(String),

    /// An error raised while solving at a particular dual level.
    #[error("at y = {y:e}: {source}")]
    AtLevel {
        y: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// The innermost error, looking through `AtLevel` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLevel { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn at_level(y: f64, source: Error) -> Self {
        Error::AtLevel {
            y,
            source: Box::new(source),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
