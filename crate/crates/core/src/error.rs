use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Bounding box with zero width or height.
    EmptyExtent,
    /// A coordinate was NaN.
    NanCoordinate,
    /// A token set was empty or a count argument was zero.
    EmptyInput(&'static str),
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    InvalidArgument(&'static str),
    /// Fewer than two clusters.
    SilhouetteUndefined,
    TooFewTokens {
        needed: usize,
        got: usize,
    },
    DuplicatePosition {
        first: usize,
        second: usize,
    },
    NonIntegerPosition {
        index: usize,
    },
    TooManyClusters {
        requested: usize,
        available: usize,
    },
    NonFinite(&'static str),
    DuplicateParameter(alloc::string::String),
    UnknownParameter(alloc::string::String),
    Diverged {
        epoch: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyExtent => write!(f, "empty extent"),
            Error::NanCoordinate => write!(f, "NaN coordinate"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::ShapeMismatch { op, left, right } => write!(
                f,
                "shape mismatch in {op}: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::SilhouetteUndefined => {
                write!(f, "silhouette undefined for fewer than two clusters")
            }
            Error::TooFewTokens { needed, got } => {
                write!(f, "need at least {needed} tokens, got {got}")
            }
            Error::DuplicatePosition { first, second } => {
                write!(f, "tokens {first} and {second} share a position")
            }
            Error::NonIntegerPosition { index } => {
                write!(f, "token {index} is not on the integer lattice")
            }
            Error::TooManyClusters { requested, available } => {
                write!(f, "requested {requested} nearest clusters but only {available} exist")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::DuplicateParameter(name) => write!(f, "duplicate parameter name `{name}`"),
            Error::UnknownParameter(name) => write!(f, "unknown parameter `{name}`"),
            Error::Diverged { epoch } => write!(f, "training diverged (NaN loss) in epoch {epoch}"),
        }
    }
}

impl core::error::Error for Error {}
