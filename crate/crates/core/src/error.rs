//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor: data length {len} does not match shape {shape:?}")]
    BadTensorShape { shape: Vec<usize>, len: usize },

    #[error("tensor: non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch in layer {layer} ({kind}): {detail}")]
    ShapeMismatch {
        layer: usize,
        kind: String,
        detail: String,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("degenerate gradient: {0}")]
    DegenerateGradient(String),

    #[error("crafting failed: every optimization step degenerated")]
    CraftingFailed,

    #[error("victim set has a trigger but the objective is trigger-free")]
    TriggerUnexpected,

    #[error("victim set has no trigger but the objective requires one")]
    TriggerMissing,

    #[error("trigger does not fit the image: {0}")]
    TriggerOutOfBounds(String),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("no samples of class {class} in the evaluation set")]
    EmptyClass { class: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("malformed file {path} at byte {offset}: {detail}")]
    Malformed {
        path: String,
        offset: u64,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
