use thiserror::Error;

/// Unified error type for the whole crate.
#[derive(Debug, Error)]
pub enum DircrError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("rule {rule}: prefix ({v1}, {v2}) cannot satisfy the rule")]
    InconsistentPrefix { rule: String, v1: i64, v2: i64 },

    #[error("rule {rule}: forced third value {forced} outside [{lo}, {hi}]")]
    RangeViolation {
        rule: String,
        forced: i64,
        lo: i64,
        hi: i64,
    },

    #[error("puzzle generation exhausted {0} retries (over-constrained config)")]
    GenerationExhausted(u32),

    #[error("bad format: {0}")]
    Format(String),

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("index {index} out of range 0..{len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unsupported format version {found} (this build reads {expected})")]
    VersionMismatch { found: String, expected: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DircrError>;

impl DircrError {
    /// Process exit code for the CLI: 2 for bad flags/config, 3 for I/O and
    /// file-format problems, 4 for a diverged training run, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use DircrError::*;
        match self {
            Config(_) | IndexOutOfRange { .. } => 2,
            Io(_) | Json(_) | Format(_) | TruncatedFile(_) | CorruptFile(_)
            | VersionMismatch { .. } | EmptyDataset => 3,
            NonFiniteLoss { .. } => 4,
            _ => 1,
        }
    }
}
