use alloc::string::String;
use core::fmt;

/// Errors raised by the analysis routines.
///
/// Messages are stable: callers and tests match on the rendered text.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A value violated a documented invariant. `field` names the offender;
    /// `reason` is the full rendered message.
    Invalid { field: &'static str, reason: String },
    /// Two inputs that must agree in shape do not.
    DimMismatch { expected: usize, found: usize },
    /// Input is empty where at least one element is required.
    Empty(&'static str),
    /// Curve has no positive value to normalize against.
    DegenerateCurve,
    /// Input has zero variance where a correlation or regression needs spread.
    ZeroVariance,
    /// Every paired difference was zero.
    DegeneratePairing,
    /// Byte stream is not a dump file.
    BadMagic,
    /// Byte stream ended before the header-declared payload.
    Truncated { expected: usize, found: usize },
    /// A tree node lacks the training-sample coverage needed for attribution.
    MissingCoverage,
    /// Brute-force enumeration refused for too many features.
    TooManyFeatures { max: usize, found: usize },
    /// A categorical or ordinal value not seen when the encoder was fitted.
    UnseenCategory { column: String, value: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Invalid { reason, .. } => f.write_str(reason),
            Error::DimMismatch { expected, found } => {
                write!(f, "dim mismatch: expected {expected}, found {found}")
            }
            Error::Empty(what) => write!(f, "{what} must be non-empty"),
            Error::DegenerateCurve => f.write_str("degenerate curve: maximum accuracy is not positive"),
            Error::ZeroVariance => f.write_str("zero variance"),
            Error::DegeneratePairing => f.write_str("degenerate pairing: all differences are zero"),
            Error::BadMagic => f.write_str("not a tunnelkit dump"),
            Error::Truncated { expected, found } => {
                write!(f, "truncated: expected {expected} bytes, found {found}")
            }
            Error::MissingCoverage => f.write_str("missing coverage metadata on tree node"),
            Error::TooManyFeatures { max, found } => {
                write!(f, "too many features for enumeration: {found} > {max}")
            }
            Error::UnseenCategory { column, value } => {
                write!(f, "unseen category {value:?} in column {column}")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Invalid { field, reason: reason.into() }
}
