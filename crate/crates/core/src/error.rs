// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum GlpError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite objective")]
    NonFiniteObjective,

    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("training diverged at step {step}: loss above initial value for {window} consecutive steps")]
    Diverged { step: usize, window: usize },

    #[error("timestep out of range: {0}")]
    TimestepOutOfRange(f64),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("unsupported format version {found} in {path}")]
    BadVersion { path: PathBuf, found: u32 },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },

    #[error("producer failed: {0}")]
    Producer(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GlpError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        GlpError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GlpError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = GlpError> = std::result::Result<T, E>;
