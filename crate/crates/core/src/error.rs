use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("tape node is missing saved value `{0}`")]
    Tape(&'static str),

    #[error("BPTT reference is limited to L <= {limit}, got L = {len}")]
    ScaleGuard { len: usize, limit: usize },

    #[error("frequency response is degenerate (peak magnitude is zero)")]
    DegenerateResponse,

    #[error("invalid task spec: {0}")]
    TaskSpec(String),

    #[error("numeric abort at step {step}: {diagnostics}")]
    NumericAbort { step: u64, diagnostics: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidValue { field: String, reason: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("data file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("bad IDX magic 0x{value:08x} in {}", .path.display())]
    BadMagic { path: PathBuf, value: u32 },

    #[error("truncated data file: {}", .0.display())]
    TruncatedFile(PathBuf),

    #[error("mismatched image/label counts: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint payload at byte offset {offset}")]
    CorruptPayload { offset: u64 },
}
