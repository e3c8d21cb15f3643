//! Pinhole camera geometry shared by the scene generator, the reconstruction
//! model and the autoregressive driver.
//!
//! Conventions used throughout:
//! - camera frame is x right, y down, z forward;
//! - [`Pose`] stores the camera-to-world rotation and the camera center;
//! - pixel `(u, v)` has its center at `(u + 0.5, v + 0.5)`;
//! - "depth" means z-depth in the camera frame, "distance" means range along a
//!   unit-length ray.

mod camera;
mod error;
mod overlap;
mod plucker;
mod splat;
mod unproject;

pub use camera::{CameraModel, Pose};
pub use error::{GeometryError, Result};
pub use overlap::{frustum_overlap_score, DepthView};
pub use plucker::{compute_plucker_map, compute_rays, PluckerMap, RayBundle};
pub use splat::{
    project_point, splat_render, splat_winners, FeaturePointCloud, RenderedCondition, SplatHit,
};
pub use unproject::{distance_to_depth, sigmoid, unproject_depth_map, unproject_with_distance};

pub use nalgebra::{Matrix3, Vector3};

/// Default near plane for the synthetic scenes, in world units.
pub const DEFAULT_NEAR: f64 = 0.1;
/// Default far plane for the synthetic scenes, in world units.
pub const DEFAULT_FAR: f64 = 20.0;
