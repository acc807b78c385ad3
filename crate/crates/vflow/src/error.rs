//! Error type shared across the library.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// A vector or matrix had the wrong length for the operation.
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// A NaN or infinity appeared where a finite value is required.
    NonFinite { what: &'static str },
    /// An inverse was requested at a point outside the layer's image
    /// (e.g. sigmoid inverse outside (0,1)).
    OutOfImage {
        layer: &'static str,
        coord: usize,
        value: f64,
    },
    /// A matrix was singular (or numerically indistinguishable from singular).
    Singular { what: &'static str },
    /// Root bracketing/bisection failed to converge.
    BisectionFailed { residual: f64 },
    /// The operation does not support this layer kind.
    UnsupportedLayer { op: &'static str, kind: &'static str },
    /// A model component required by the operation is absent (e.g. no q flow).
    MissingComponent { what: &'static str },
    /// Bad run configuration.
    InvalidConfig { msg: String },
    /// Malformed checkpoint or other serialized payload.
    Format { msg: String },
    /// Training aborted (e.g. too many non-finite steps).
    TrainingAborted { msg: String },
    /// An error attributed to a specific layer of a flow.
    AtLayer { index: usize, source: Box<Error> },
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimMismatch {
                what,
                expected,
                got,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, got {got}"),
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::OutOfImage {
                layer,
                coord,
                value,
            } => write!(
                f,
                "inverse of {layer} undefined at coordinate {coord}: {value} is outside the layer image"
            ),
            Error::Singular { what } => write!(f, "singular matrix in {what}"),
            Error::BisectionFailed { residual } => {
                write!(f, "bisection failed to converge (residual {residual:e})")
            }
            Error::UnsupportedLayer { op, kind } => {
                write!(f, "{op} does not support layer kind {kind}")
            }
            Error::MissingComponent { what } => write!(f, "model has no {what}"),
            Error::InvalidConfig { msg } => write!(f, "invalid config: {msg}"),
            Error::Format { msg } => write!(f, "format error: {msg}"),
            Error::TrainingAborted { msg } => write!(f, "training aborted: {msg}"),
            Error::AtLayer { index, source } => write!(f, "layer {index}: {source}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::AtLayer { source, .. } => Some(source),
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl Error {
    /// Attach a flow layer index to an error bubbling out of that layer.
    pub fn at_layer(self, index: usize) -> Error {
        Error::AtLayer {
            index,
            source: Box::new(self),
        }
    }

    /// True for failures of numeric origin (as opposed to bad usage/config).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::OutOfImage { .. }
            | Error::Singular { .. }
            | Error::BisectionFailed { .. }
            | Error::TrainingAborted { .. } => true,
            Error::AtLayer { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
