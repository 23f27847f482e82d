use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LcdError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("node {node} out of range for a graph on {q} nodes")]
    NodeOutOfRange { node: usize, q: usize },
    #[error("graph has a directed cycle")]
    Cyclic,
    #[error("enumeration cap exceeded: {q} nodes > cap {cap}")]
    CapExceeded { q: usize, cap: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported cumulant order {0}")]
    UnsupportedOrder(usize),
    #[error("too few samples: need more than {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("non-finite entry in data")]
    NonFinite,
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("rank {q} exceeds dimension {p}")]
    RankExceedsDimension { q: usize, p: usize },
    #[error("rank {q} is not below the identifiability bound {bound} for dimension {p}")]
    NotIdentifiable { q: usize, p: usize, bound: usize },
    #[error("decomposition failed: {0}")]
    Decomposition(String),
    #[error("residual {residual:.3e} above tolerance {tol:.3e}")]
    Residual { residual: f64, tol: f64 },
    #[error("alignment failed: {0}")]
    Alignment(String),
    #[error("gauge violation: {0}")]
    GaugeViolation(String),
    #[error("inconsistent linear system at node {0}")]
    Inconsistent(usize),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for LcdError {
    fn from(e: std::io::Error) -> Self {
        LcdError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for LcdError {
    fn from(e: serde_json::Error) -> Self {
        LcdError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LcdError>;
