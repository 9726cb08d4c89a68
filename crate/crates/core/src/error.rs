use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("instance norm needs at least 2 elements per plane, got {0}")]
    DegeneratePlane(usize),

    #[error("every key position is masked; attention has no context")]
    FullyMasked,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value during evaluation: {0}")]
    Evaluation(String),

    #[error("non-finite gradient for `{name}` at step {step}")]
    NonFiniteGradient { name: String, step: u64 },

    #[error("training diverged: loss `{name}` = {value} at iteration {iter}")]
    Divergence {
        name: String,
        value: f64,
        iter: usize,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("checkpoint error in field `{field}`: {detail}")]
    Checkpoint { field: &'static str, detail: String },

    #[error("checkpoint version mismatch: file has version {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("image error for {path}: {detail}")]
    Image { path: PathBuf, detail: String },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
