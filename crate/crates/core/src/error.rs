use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("invalid array: {0}")]
    InvalidArray(String),

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("no surviving runs at timestep {0}")]
    NoSurvivingRuns(usize),

    #[error("timestep out of order: expected {expected}, got {got}")]
    OutOfOrder { expected: usize, got: usize },

    #[error("enumeration guard: {0}")]
    SizeGuard(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("grammar error: {0}")]
    Grammar(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("symbol {0:?} is not in the input alphabet")]
    UnknownSymbol(String),

    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),

    #[error("language has no strings with lengths in [{min}, {max}]")]
    EmptySupport { min: usize, max: usize },

    #[error("improper PCFG: {0}")]
    ImproperPcfg(String),

    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
