use alloc::string::String;
use core::fmt;

use crate::glyph::Charcode;

/// Errors produced by the core crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes disagree or violate a size invariant.
    Shape(String),
    /// A configuration value is outside its allowed range.
    InvalidConfig(String),
    /// A split partition would come out empty.
    InsufficientData(String),
    /// No valid (content, style) pair exists in the requested split.
    Exhausted(String),
    /// An operation that needs at least one input got none.
    EmptyInput,
    /// Retrieval against an index with no entries.
    EmptyIndex,
    UnknownStyle(String),
    MissingReferenceImage { style_id: String, charcode: Charcode },
    /// Pretrained extractor mode requested without weights.
    MissingWeights(String),
    /// An image set too small to form a covariance.
    DegenerateSet(String),
    EmptyPartition(String),
    /// Dataset-level failure, e.g. an empty pretraining split.
    Data(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::InvalidConfig(m) => write!(f, "invalid configuration: {m}"),
            Error::InsufficientData(m) => write!(f, "insufficient data: {m}"),
            Error::Exhausted(m) => write!(f, "no valid triplet available: {m}"),
            Error::EmptyInput => f.write_str("empty input"),
            Error::EmptyIndex => f.write_str("index has no entries"),
            Error::UnknownStyle(s) => write!(f, "unknown style `{s}`"),
            Error::MissingReferenceImage { style_id, charcode } => {
                write!(f, "no reference glyph for {charcode} in style `{style_id}`")
            }
            Error::MissingWeights(m) => write!(f, "missing extractor weights: {m}"),
            Error::DegenerateSet(m) => write!(f, "degenerate image set: {m}"),
            Error::EmptyPartition(p) => write!(f, "partition {p} is empty"),
            Error::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T, E = Error> = core::result::Result<T, E>;
