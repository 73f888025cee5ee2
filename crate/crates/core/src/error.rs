use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two grids that must agree in size do not.
    SizeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// A parameter is outside its documented range.
    InvalidParameter { name: &'static str, reason: String },
    /// Raw buffer does not match the declared dimensions or holds bad values.
    InvalidData(String),
    /// Tensor shapes are incompatible for an operator.
    Shape(String),
    /// Training produced a NaN or infinite loss.
    NonFiniteLoss { epoch: usize, batch: usize },
    /// A serialized weight file could not be decoded.
    Format(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::SizeMismatch { expected, found } => write!(
                f,
                "size mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::InvalidParameter { name, reason } => {
                write!(f, "invalid parameter `{name}`: {reason}")
            }
            Error::InvalidData(msg) => write!(f, "invalid data: {msg}"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::NonFiniteLoss { epoch, batch } => {
                write!(f, "non-finite loss at epoch {epoch}, batch {batch}")
            }
            Error::Format(msg) => write!(f, "weight file format error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
