use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum EvgsError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid polarity {value} at line {line} (expected 1 or -1)")]
    Polarity { line: usize, value: i64 },

    #[error("timestamps decrease at line {line}: {prev} > {next}")]
    Ordering { line: usize, prev: u64, next: u64 },

    #[error("event at line {line} lies outside the {width}x{height} sensor: ({x}, {y})")]
    OutOfSensor {
        line: usize,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("time {t} us outside trajectory range [{min}, {max}]")]
    Range { t: u64, min: u64, max: u64 },

    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("stream holds {available} events, window needs {needed}")]
    InsufficientEvents { available: usize, needed: usize },

    #[error("non-finite gradient for gaussian {index}")]
    NonFiniteGradient { index: usize },

    #[error("non-finite loss at iteration {iter}")]
    NonFiniteLoss { iter: usize },

    #[error("resolution mismatch for {path}: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    Resolution {
        path: PathBuf,
        expected_w: u32,
        expected_h: u32,
        got_w: u32,
        got_h: u32,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, EvgsError>;

impl EvgsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvgsError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(message: impl Into<String>) -> Self {
        EvgsError::Argument(message.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        EvgsError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors that stem from user input rather than runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            EvgsError::Config { .. }
                | EvgsError::Argument(_)
                | EvgsError::Resolution { .. }
                | EvgsError::Io { .. }
                | EvgsError::Parse { .. }
                | EvgsError::Polarity { .. }
                | EvgsError::Ordering { .. }
                | EvgsError::OutOfSensor { .. }
        )
    }
}
