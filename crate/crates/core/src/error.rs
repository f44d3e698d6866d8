use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (smallest eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { eigenvalue: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("exact Gaussian flow requested but the model is not a Gaussian pair")]
    ExactFlowUnavailable,

    #[error("momentum-flip conjugacy needs an even auxiliary density")]
    AuxiliaryNotEven,

    #[error("{block} is singular (|det| = {det:e}): t is at or beyond a conjugate point")]
    SingularBlock { block: &'static str, det: f64 },

    #[error("t = {t} is outside the admissible regime: {what} = {value:.6} >= pi/2")]
    OutOfRegime {
        t: f64,
        what: &'static str,
        value: f64,
    },

    #[error("operators live on different grids")]
    GridMismatch,

    #[error("could not invert the position map at node {node}: {reason}")]
    Inversion { node: usize, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
