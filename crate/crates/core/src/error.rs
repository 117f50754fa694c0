use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),

    #[error("parameter vector outside space: dimension `{name}` value {value} not in [{lo}, {hi}]")]
    OutsideSpace {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("gaussian process: {0}")]
    Gp(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("environment: {0}")]
    Env(String),

    #[error("training budget {budget} is smaller than one generation ({generation} steps)")]
    BudgetTooSmall { budget: u64, generation: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty history")]
    EmptyHistory,

    #[error("checkpoint format version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint architecture {found:?} does not match expected {expected:?}")]
    CheckpointArch {
        found: (usize, usize, usize),
        expected: (usize, usize, usize),
    },

    #[error("corrupt checkpoint {path}: {reason}")]
    CheckpointCorrupt { path: PathBuf, reason: String },

    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    #[error("run data: {0}")]
    RunData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
