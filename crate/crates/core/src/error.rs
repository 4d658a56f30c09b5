use core::fmt;

/// Errors raised by the numeric core.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A Cholesky pivot was not strictly positive.
    NotPositiveDefinite,
    /// An input or intermediate value was NaN or infinite.
    NonFinite,
    /// NaN or infinity appeared while filtering step `step` of a sequence.
    NonFiniteAt { step: usize },
    /// Degrees of freedom outside the admissible range.
    BadDof { dof: f64 },
    /// A measurement frame with no points.
    EmptyFrame,
    /// Initialisation needs at least two points.
    TooFewPoints { n: usize },
    /// The predicted extension matrix could not be inverted.
    SingularExtension,
    /// The innovation covariance could not be inverted.
    SingularInnovation,
    /// Two sequences that must align have different lengths.
    LengthMismatch { expected: usize, found: usize },
    /// Matrix or tensor shapes do not conform.
    ShapeMismatch,
    /// Backward pass requested on a tape that recorded nothing.
    TapeEmpty,
    /// Training or evaluation asked for on an empty dataset.
    EmptyDataset,
    /// A configuration value is out of range.
    InvalidConfig(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotPositiveDefinite => write!(f, "matrix is not positive definite"),
            Error::NonFinite => write!(f, "non-finite value"),
            Error::NonFiniteAt { step } => write!(f, "non-finite value at step {step}"),
            Error::BadDof { dof } => write!(f, "degrees of freedom {dof} out of range"),
            Error::EmptyFrame => write!(f, "measurement frame is empty"),
            Error::TooFewPoints { n } => write!(f, "need at least 2 points, got {n}"),
            Error::SingularExtension => write!(f, "extension matrix is singular"),
            Error::SingularInnovation => write!(f, "innovation covariance is singular"),
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::ShapeMismatch => write!(f, "shape mismatch"),
            Error::TapeEmpty => write!(f, "tape is empty"),
            Error::EmptyDataset => write!(f, "dataset is empty"),
            Error::InvalidConfig(what) => write!(f, "invalid configuration: {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
