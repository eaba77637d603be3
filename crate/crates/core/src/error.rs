use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the core routines.
///
/// Variants are coarse on purpose: callers map them onto process exit codes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("invalid graph structure: {0}")]
    Structure(String),
    #[error("wrong number of inputs: expected {expected}, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("missing quantization range for tensor {0}")]
    Coverage(usize),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("training diverged at iteration {iter}: loss {loss}")]
    Diverged { iter: usize, loss: f64 },
    #[error("pruning refused: {0}")]
    PruneRefused(String),
    #[error("background not initialized: {0}")]
    Init(String),
}

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
