use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("frame has no depth map")]
    MissingDepth,
    #[error("could not generate a valid {kind} trajectory after {attempts} attempts: {reason}")]
    TrajectoryRejected { kind: String, attempts: usize, reason: String },
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] scenegen_geometry::GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, SceneError>;
