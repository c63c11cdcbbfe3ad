use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report. Messages for the planner and
/// perception variants are stable: the expert copies them into transcripts.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient points for k-NN (have {points}, need more than {k})")]
    InsufficientPoints { points: usize, k: usize },
    #[error("object not found")]
    ObjectNotFound,
    #[error("pose in collision")]
    PoseInCollision,
    #[error("unreachable goal")]
    UnreachableGoal,
    #[error("ik failed")]
    IkFailed,
    #[error("unreachable target")]
    UnreachableTarget,
    #[error("arm plan in collision")]
    ArmPlanInCollision,
    #[error("grasp failed")]
    GraspFailed,
    #[error("navigation timeout")]
    NavigationTimeout,
    #[error("unsupported dataset version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("{path}: truncated: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("{path}: corrupt at byte offset {offset}: {reason}")]
    Corrupt {
        path: PathBuf,
        offset: u64,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value detected: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
