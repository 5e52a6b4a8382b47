use thiserror::Error;

use crate::problem::Violation;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by every solver and utility in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The requested solver does not cover this coefficient structure.
    #[error("unsupported problem structure: {0}")]
    UnsupportedStructure(String),

    /// A quantity was requested that only exists for feasible solutions.
    #[error("infeasible solution: {0}")]
    Infeasible(String),

    #[error("unsupported noise model: {0}")]
    UnsupportedNoise(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("invalid problem data:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
