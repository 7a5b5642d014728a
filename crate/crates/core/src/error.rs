use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NpcError>;

#[derive(Debug, Error)]
pub enum NpcError {
    #[error("config error: {0}")]
    Config(String),

    #[error("distance not strictly increasing at index {index} (s = {s})")]
    NonMonotone { index: usize, s: f64 },

    #[error("record at s = {got} breaks contiguity, expected s = {expected}")]
    Contiguity { expected: f64, got: f64 },

    #[error("trip does not cover [{from}, {to}] m")]
    OutOfRange { from: f64, to: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("no candidate windows in trip buffer yet (cold start)")]
    ColdStart,

    #[error("degenerate segment at s = {s}: coincident key points with distinct speeds")]
    DegenerateSegment { s: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model artifact: {0}")]
    Artifact(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl NpcError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NpcError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            NpcError::Config(_) | NpcError::Json(_) => 2,
            NpcError::Numerical(_) => 4,
            _ => 3,
        }
    }
}
