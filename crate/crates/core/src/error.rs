use thiserror::Error;

use crate::assemble::CollisionReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid stage index {stage} (topology has {num_stages} stages)")]
    InvalidStage { stage: usize, num_stages: usize },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{0}")]
    Collision(Box<CollisionReport>),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("unknown building block `{0}`")]
    UnknownBlock(String),

    #[error("block `{name}` does not support {devices} devices")]
    UnsupportedDevices { name: String, devices: usize },

    #[error("document error: {0}")]
    Document(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Domain errors map to exit status 1; usage and I/O errors to 2.
    pub fn is_domain(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Usage(_))
    }
}
