use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("cost matrix contains NaN")]
    InvalidCost,
    #[error("empty ground-truth target set")]
    EmptyTargets,
    #[error("degenerate grasp: {0}")]
    DegenerateGrasp(String),
    #[error("training diverged (non-finite loss)")]
    TrainingDiverged,
    #[error("weights manifest mismatch: {0}")]
    WeightsMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
