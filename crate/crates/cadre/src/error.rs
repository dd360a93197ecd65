//! Error types shared across the toolkit.
//!
//! Errors fall into two broad classes that the CLI maps to exit codes:
//! invalid input (exit 2) and numerical failure (exit 3).

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CadreError>;

#[derive(Debug, Error)]
pub enum CadreError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("matrix is not square: {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("latent trajectory diverged at step {step} (|value| = {value:.3e}); transition weights are likely unstable")]
    DivergedTrajectory { step: usize, value: f64 },

    #[error("latent array does not match the generating spec: {0}")]
    InvalidLatents(String),

    #[error("unknown assumption violation `{0}`")]
    UnknownViolation(String),

    #[error("non-finite loss at step {step} ({component})")]
    NonFiniteLoss { step: usize, component: String },

    #[error("mixing Jacobian is numerically singular (condition {cond:.3e} exceeds 1e12 even with ridge)")]
    SingularMixing { cond: f64 },

    #[error("SEM graph contains a cycle")]
    CyclicSem,

    #[error("not enough samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("latent dimension {dim} exceeds the exhaustive-search limit {max}")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("ground truth missing for metric `{0}`")]
    MissingGroundTruth(String),

    #[error("ragged CSV: row {row} has {got} cells, expected {expected}")]
    RaggedRows { row: usize, expected: usize, got: usize },

    #[error("non-numeric cell at row {row}, column {col}: `{value}`")]
    NonNumericCell { row: usize, col: usize, value: String },

    #[error("input contains no data rows")]
    EmptyData,

    #[error("archive format error: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CadreError {
    /// CLI exit code: 2 for invalid input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CadreError::DivergedTrajectory { .. }
            | CadreError::NonFiniteLoss { .. }
            | CadreError::SingularMixing { .. } => 3,
            _ => 2,
        }
    }
}

/// Builds a `ShapeMismatch` from printable shapes.
pub fn shape_mismatch(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> CadreError {
    CadreError::ShapeMismatch {
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}
