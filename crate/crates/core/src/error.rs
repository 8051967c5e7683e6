use std::path::PathBuf;

/// Errors produced by the simulation, gradient, data and training code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: bad magic number {found:#010x} (expected {expected:#010x})", path.display())]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{}: truncated payload (need {needed} bytes, have {available})", path.display())]
    Truncated {
        path: PathBuf,
        needed: usize,
        available: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid label {label} at index {index}")]
    BadLabel { index: usize, label: u8 },

    #[error("checkpoint parse error at line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(context: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Dimension {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
