//! Error type shared by the whole pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FdrError>;

#[derive(Debug, Error)]
pub enum FdrError {
    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("non-finite value in {0}")]
    NonFiniteInput(String),

    #[error("field does not match grid: {0}")]
    GridMismatch(String),

    #[error("dual field components disagree in shape")]
    ShapeMismatch,

    #[error("parabola curvature must be positive, got {0}")]
    NonpositiveCurvature(f64),

    #[error("solver iterate became non-finite at iteration {0}")]
    NonFiniteIterate(usize),

    #[error("solver failed: {0}")]
    SolverFailure(String),

    #[error("every hyperparameter candidate failed")]
    AllCandidatesFailed,

    #[error("too few usable resampling repetitions ({kept} of {total})")]
    TooFewReps { kept: usize, total: usize },

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
