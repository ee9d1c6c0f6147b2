use thiserror::Error;

pub type Result<T> = std::result::Result<T, CrinError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrinError {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("unknown topology `{0}`")]
    UnknownTopology(String),

    #[error("family constraint violated: {0}")]
    ConstraintViolated(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("eigensolver did not converge for a {dim}x{dim} matrix")]
    NoConvergence { dim: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CrinError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            CrinError::NoConvergence { .. } | CrinError::Numerical(_)
        )
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            CrinError::DimensionMismatch { .. } => "dimension_mismatch",
            CrinError::InvalidParams(_) => "invalid_params",
            CrinError::InvalidGraph(_) => "invalid_graph",
            CrinError::UnknownTopology(_) => "unknown_topology",
            CrinError::ConstraintViolated(_) => "constraint_violated",
            CrinError::OutOfRange(_) => "out_of_range",
            CrinError::NonFinite(_) => "non_finite",
            CrinError::NoConvergence { .. } => "no_convergence",
            CrinError::Numerical(_) => "numerical",
        }
    }
}
