//! Procedural "mini-city" scenes with exact ground truth.
//!
//! Scenes are axis-aligned textured boxes on a ground plane. The renderer
//! ray-casts them analytically, so depth and semantic maps are exact and
//! every generator is a pure function of its seed and parameters.

mod dataset;
mod error;
mod frame;
mod mono;
mod render;
mod scene;
mod trajectory;

pub use dataset::{
    generate_dataset, read_array_f32, read_array_u8, read_dataset, read_image_png, write_array_f32,
    write_array_u8, write_dataset, write_image_png, ArrayHeader, ClipRecord, DatasetManifest, DatasetParams,
};
pub use error::{Result, SceneError};
pub use frame::PosedFrame;
pub use mono::{mono_depth_stub, MonoDepthParams};
pub use render::{intersect_scene, render_layout_maps, render_view, LayoutMaps, RayHit};
pub use scene::{generate_scene, BoxPrimitive, SceneDescription, SceneParams, SemanticClass, GROUND_HALF_SIZE};
pub use trajectory::{generate_trajectory, render_depth, Trajectory, TrajectoryKind, TrajectoryParams};

/// Default image resolution (square).
pub const IMAGE_SIZE: usize = 64;

/// The default 64×64 camera with a 60° field of view.
pub fn default_camera() -> scenegen_geometry::CameraModel {
    scenegen_geometry::CameraModel::with_fov(IMAGE_SIZE, 60.0).expect("valid default camera")
}
