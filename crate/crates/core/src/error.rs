use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GfdmError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate point cloud at point {point}: {reason}")]
    DegenerateCloud { point: usize, reason: String },

    #[error("duplicate points {first} and {second}")]
    DuplicatePoints { first: usize, second: usize },

    #[error("{path}: line {line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("singular stencil at point {point}")]
    SingularStencil { point: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("linear solver failed after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("time stepping diverged at step {step}")]
    Diverged { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GfdmError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            GfdmError::Parameter(_) | GfdmError::Format { .. } | GfdmError::Io(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, GfdmError>;
