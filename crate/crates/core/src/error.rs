use thiserror::Error;

/// Errors produced by the factorization library.
#[derive(Debug, Error)]
pub enum NutfError {
    #[error("invalid problem dimensions: {0}")]
    InvalidDims(String),

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("rank {rank} exceeds min(N, T*C) = {limit}")]
    RankTooLarge { rank: usize, limit: usize },

    #[error("instance too large for the dense reference solver: {cells} cells (limit {limit})")]
    InstanceTooLarge { cells: usize, limit: usize },

    #[error("malformed snapshot: {0}")]
    Format(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("unknown category {0:?} (no fallback bucket configured)")]
    UnknownCategory(String),

    #[error("timestamp {timestamp} falls outside the slot window")]
    OutOfWindow { timestamp: i64 },

    #[error("empty validation list")]
    EmptyValidation,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NutfError {
    /// True for failures that originate in the numerics rather than in the
    /// caller's input (non-finite values, breakdown of a kernel).
    pub fn is_numerical(&self) -> bool {
        matches!(self, NutfError::NonFinite(_))
    }

    pub(crate) fn parse(line: u64, message: impl Into<String>) -> Self {
        NutfError::Parse {
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, NutfError>;
