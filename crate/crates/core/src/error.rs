use thiserror::Error;

/// Errors shared by every analytic and simulation routine in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The queue described by the arguments has no steady state. The payload
    /// names the violated constraint, e.g. `lambda >= 1/eta`.
    #[error("unstable: {constraint}")]
    Unstable { constraint: String },

    #[error("outside approximation domain: {0}")]
    ApproximationDomain(String),

    #[error("iteration limit of {max_iter} reached (residual {residual:e})")]
    IterationLimit { max_iter: usize, residual: f64 },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("layout violation: {0}")]
    Layout(#[from] crate::layout::LayoutViolation),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` is neither `Clone` nor `PartialEq`; keep its rendering.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct IoError(pub String);

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(IoError(e.to_string()))
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn unstable(constraint: impl Into<String>) -> Self {
        Error::Unstable {
            constraint: constraint.into(),
        }
    }

    pub fn is_instability(&self) -> bool {
        matches!(self, Error::Unstable { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
