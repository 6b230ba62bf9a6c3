use thiserror::Error;

use crate::factor::VarId;

pub type Result<T, E = SteapError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SteapError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("degenerate time interval dt = {0}")]
    DegenerateInterval(f64),

    #[error("interpolation time {tau} outside [0, {dt}]")]
    InterpolationOutOfRange { tau: f64, dt: f64 },

    #[error("no value for variable {0}")]
    MissingVariable(VarId),

    #[error("factor {index} ({kind}) produced a non-finite residual")]
    NonFiniteResidual { index: usize, kind: &'static str },

    #[error("under-constrained problem: variable {0} is rank deficient")]
    RankDeficient(VarId),

    #[error("invalid noise model: {0}")]
    InvalidNoise(String),

    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("could not place obstacle {0}: world too crowded")]
    PlacementFailed(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(String),
}
