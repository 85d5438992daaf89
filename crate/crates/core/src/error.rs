use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("quaternion norm {norm} deviates from 1 by more than {tolerance}")]
    NotUnit { norm: f64, tolerance: f64 },

    #[error("matrix is not a rotation: orthogonality defect {orthogonality:.3e}, det {det}")]
    NotRotation { orthogonality: f64, det: f64 },

    #[error("angle {0} outside [0, pi]")]
    AngleOutOfRange(f64),

    #[error("time {t} too close to 1 (1 - t must be at least {t_min})")]
    TimeTooClose { t: f64, t_min: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("non-finite loss at batch item {index}")]
    NonFiniteLoss { index: usize },

    #[error("non-finite parameters after epoch {epoch}, batch {batch}")]
    NonFiniteParams { epoch: usize, batch: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("degenerate chain: neighbourhood normaliser Z = {0}")]
    DegenerateChain(i64),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}
