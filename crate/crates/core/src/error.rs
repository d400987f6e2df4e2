use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    Dimensions {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 4],
        right: [usize; 4],
    },
    #[error("data length {len} does not match {width}x{height}")]
    Length {
        len: usize,
        width: usize,
        height: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("value outside [0, 1] in {0}")]
    OutOfRange(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = core::result::Result<T, Error>;
