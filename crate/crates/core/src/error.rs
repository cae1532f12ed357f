use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Image dimensions are not compatible with the detector.
    DimensionMismatch { height: usize, width: usize, channels: usize, reason: &'static str },
    /// A buffer does not have the length the operation expects.
    ShapeMismatch { expected: usize, actual: usize },
    /// No timing sample rises above the plateau, so no quadratic segment exists.
    FitDegenerate,
    /// Too few samples, or they do not span enough of the size axis.
    InsufficientSamples { got: usize, needed: usize },
    EmptyInput,
    /// A single benchmark run exceeded the hard safety limit.
    SafetyLimitExceeded { n: usize, elapsed_us: u128 },
    /// Models in an ensemble produce differently shaped outputs.
    GeometryMismatch,
    InvalidConfig(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { height, width, channels, reason } => {
                write!(f, "image {height}x{width}x{channels} rejected: {reason}")
            }
            Error::ShapeMismatch { expected, actual } => {
                write!(f, "shape mismatch: expected {expected} values, got {actual}")
            }
            Error::FitDegenerate => f.write_str("fit degenerate: no sample exceeds the plateau"),
            Error::InsufficientSamples { got, needed } => {
                write!(f, "insufficient samples: got {got}, need {needed} spanning a decade of n")
            }
            Error::EmptyInput => f.write_str("empty input"),
            Error::SafetyLimitExceeded { n, elapsed_us } => {
                write!(f, "benchmark run at n={n} took {elapsed_us} us, above the safety limit")
            }
            Error::GeometryMismatch => f.write_str("ensemble models disagree on output geometry"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
