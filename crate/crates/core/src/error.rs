use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape { context: &'static str, expected: String, got: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Geometry(#[from] scenegen_geometry::GeometryError),
    #[error(transparent)]
    Scene(#[from] scenegen_scene::SceneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CoreError {
    CoreError::InvalidInput(msg.into())
}

pub(crate) fn shape_err(context: &'static str, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> CoreError {
    CoreError::Shape { context, expected: format!("{expected:?}"), got: format!("{got:?}") }
}
