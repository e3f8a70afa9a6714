use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eig:e})")]
    NotSpsd { min_eig: f64 },

    #[error("rank-one update drives the pseudo-determinant to a non-positive value")]
    NonPositivePdet,

    #[error("cubic leading coefficient is numerically zero")]
    DegenerateLeadingCoefficient,

    #[error("generator lies in the range of the shape matrix but has zero weighted norm")]
    DegenerateDirection,

    #[error("shape matrix has zero (weighted) trace")]
    ZeroTrace,

    #[error("no optimal parameter root lies in [0, 1)")]
    NoRootInUnit,

    #[error("scale became non-positive ({0:e}); measurement data are inconsistent")]
    NonPositiveScale(f64),

    #[error("measurement {index} does not intersect the ellipsoid")]
    InconsistentMeasurement { index: usize },

    #[error("invalid measurement bounds [{lower}, {upper}]")]
    InvalidBounds { lower: f64, upper: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("transition matrix at step {step} is numerically singular")]
    SingularTransition { step: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
