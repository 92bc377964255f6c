use core::fmt;

/// Errors produced by the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree on a dimension.
    Dim { expected: usize, found: usize },
    /// A constructor received a NaN or infinite value.
    NonFinite,
    /// A vector or matrix with no elements where at least one is required.
    Empty,
    /// Every entry of a softmax row was masked out.
    FullyMasked { row: usize },
    /// Rank correlation is undefined because one input is constant.
    UndefinedCorrelation,
    /// Appended positions do not continue the cache's time order.
    Order { last: u64, start: u64 },
    /// An index is outside the cache.
    Index { index: usize, len: usize },
    /// A policy was asked to score without the inputs it needs.
    Context(&'static str),
    /// Invalid configuration value.
    Config(&'static str),
    /// A value is outside the domain of a bound check.
    Domain(&'static str),
    /// Enumeration would be too large.
    Size { n: usize, max: usize },
    /// A supposedly orthonormal basis failed the orthonormality check.
    Basis { deviation: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::NonFinite => f.write_str("non-finite value"),
            Error::Empty => f.write_str("empty input"),
            Error::FullyMasked { row } => write!(f, "softmax row {row} is fully masked"),
            Error::UndefinedCorrelation => {
                f.write_str("rank correlation undefined for a constant sequence")
            }
            Error::Order { last, start } => write!(
                f,
                "append at position {start} does not follow last cached position {last}"
            ),
            Error::Index { index, len } => {
                write!(f, "index {index} out of range for cache of length {len}")
            }
            Error::Context(msg) => write!(f, "scoring context: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Size { n, max } => write!(f, "size {n} exceeds enumeration limit {max}"),
            Error::Basis { deviation } => {
                write!(f, "basis is not orthonormal (max deviation {deviation:e})")
            }
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T, E = Error> = core::result::Result<T, E>;
