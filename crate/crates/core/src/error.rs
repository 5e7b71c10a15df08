use thiserror::Error;

/// Errors produced by the numerical kernels, the file format and the CLI.
#[derive(Debug, Error)]
pub enum FsaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The normalizing sum of a linear softmax is (numerically) zero.
    #[error("degenerate denominator in linear softmax (|sum| = {sum:e})")]
    DegenerateDenominator { sum: f64 },

    /// A query or key column has (numerically) zero l2 norm.
    #[error("zero-norm {which} column at token {index} (norm = {norm:e})")]
    ZeroNormColumn {
        which: &'static str,
        index: usize,
        norm: f64,
    },

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FsaError>;

pub(crate) fn invalid(msg: impl Into<String>) -> FsaError {
    FsaError::InvalidArgument(msg.into())
}
