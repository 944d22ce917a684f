//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, FrrError>;

#[derive(Debug, Error)]
pub enum FrrError {
    /// A dataset file did not match the expected schema.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A linear system was too ill-conditioned to solve reliably.
    /// `condition` is the relative smallest-eigenvalue estimate
    /// lambda_min / lambda_max of the system matrix.
    #[error("singular system ({context}): relative smallest eigenvalue {condition:.3e}")]
    Singular { context: String, condition: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    /// A reweighting scheme without a finite positive weight ceiling.
    #[error("unbounded weight scheme: {0}")]
    UnboundedWeight(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Scene generation could not produce a usable geometry.
    #[error("scene error: {0}")]
    Scene(String),

    /// Every tuning trial failed to produce a model.
    #[error("tuning failed: {0}")]
    Tuning(String),
}

impl FrrError {
    /// True for failures of the numerical kind (as opposed to usage or
    /// i/o problems). The CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FrrError::Singular { .. } | FrrError::Tuning(_) | FrrError::UnboundedWeight(_)
        )
    }
}
