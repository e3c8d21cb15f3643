use nalgebra::Vector3;

use crate::camera::{CameraModel, Pose};
use crate::error::{GeometryError, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_range(near: f64, far: f64) -> Result<()> {
    if !(near > 0.0 && far > near) {
        return Err(GeometryError::InvalidRange { near, far });
    }
    Ok(())
}

/// Maps an unbounded regressed value to a distance in `(near, far)`:
/// `near * (1 - σ(raw)) + far * σ(raw)`.
pub fn distance_to_depth(raw: f64, near: f64, far: f64) -> Result<f64> {
    check_range(near, far)?;
    let w = sigmoid(raw);
    Ok(near * (1.0 - w) + far * w)
}

/// Points `o + d * distance(raw)` for every ray.
pub fn unproject_with_distance(
    raw_distance: &[f64],
    origins: &[Vector3<f64>],
    directions: &[Vector3<f64>],
    near: f64,
    far: f64,
) -> Result<Vec<Vector3<f64>>> {
    check_range(near, far)?;
    if raw_distance.len() != origins.len() || origins.len() != directions.len() {
        return Err(GeometryError::ShapeMismatch {
            expected: format!("{} rays", raw_distance.len()),
            got: format!("{} origins, {} directions", origins.len(), directions.len()),
        });
    }
    Ok(raw_distance
        .iter()
        .zip(origins.iter().zip(directions))
        .map(|(&raw, (o, d))| {
            let w = sigmoid(raw);
            o + d * (near * (1.0 - w) + far * w)
        })
        .collect())
}

/// World points of every pixel center given a z-depth map (row-major).
pub fn unproject_depth_map(camera: &CameraModel, pose: &Pose, depth: &[f64]) -> Result<Vec<Vector3<f64>>> {
    if depth.len() != camera.num_pixels() {
        return Err(GeometryError::ShapeMismatch {
            expected: format!("{}x{} depth map", camera.height, camera.width),
            got: format!("{} values", depth.len()),
        });
    }
    let mut points = Vec::with_capacity(depth.len());
    for v in 0..camera.height {
        for u in 0..camera.width {
            let d = depth[v * camera.width + u];
            points.push(pose.camera_to_world(&(camera.pixel_direction(u, v) * d)));
        }
    }
    Ok(points)
}
