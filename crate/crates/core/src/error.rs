use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("coordinate out of bounds: event {index} at ({x}, {y}) outside {width}x{height}")]
    OutOfBounds { index: usize, x: u32, y: u32, width: u32, height: u32 },

    #[error("unsorted events: record {index} violates canonical (t, y, x, p) order")]
    Unsorted { index: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: Vec<u8> },

    #[error("truncated record at byte offset {offset}")]
    Truncated { offset: u64 },

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("non-deterministic program: two evaluations at the same point differ ({first} vs {second})")]
    NonDeterministic { first: f64, second: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed for sample {sample}: {source}")]
    Stage {
        stage: &'static str,
        sample: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid { what, reason: reason.into() }
    }

    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format { format, reason: reason.into() }
    }

    /// True for errors caused by bad input data (as opposed to I/O or usage problems).
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
