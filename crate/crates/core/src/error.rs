use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// A single field-level problem found while validating a config.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join_fields(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "inverse iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    IterationDivergence { iterations: usize, residual: f64 },

    #[error("cone condition violated at ({x1}, {x2}): {reason}")]
    NotHyperbolic { x1: f64, x2: f64, reason: String },

    #[error("test-function families differ: K = {left} vs K = {right}")]
    FamilyMismatch { left: usize, right: usize },

    #[error("degenerate cocycle at step {step}: re-orthonormalization produced a zero column")]
    DegenerateCocycle { step: usize },

    #[error("insufficient data: {uncensored} uncensored rows in window, need at least {required}")]
    InsufficientData { uncensored: usize, required: usize },

    #[error("partition construction invalid: {0}")]
    ConstructionInvalid(String),

    #[error("no partition piece contains ({x1}, {x2})")]
    LocationFailure { x1: f64, x2: f64 },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("invalid config: {}", join_fields(.0))]
    ConfigInvalid(Vec<FieldError>),

    #[error("record not found: {}", .0.display())]
    MissingRecord(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
