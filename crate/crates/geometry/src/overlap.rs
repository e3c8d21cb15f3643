use crate::camera::{CameraModel, Pose};
use crate::unproject::unproject_depth_map;

/// A posed view with a z-depth map, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct DepthView<'a> {
    pub camera: &'a CameraModel,
    pub pose: &'a Pose,
    pub depth: &'a [f64],
}

/// Mean over `window_poses` of the fraction of the candidate's unprojected
/// pixels that land inside `window_camera`'s image with positive depth.
///
/// Frustum containment only: the window views have no depth to test
/// occlusion against.
pub fn frustum_overlap_score(candidate: DepthView<'_>, window_poses: &[Pose], window_camera: &CameraModel) -> f64 {
    if window_poses.is_empty() {
        return 0.0;
    }
    let Ok(points) = unproject_depth_map(candidate.camera, candidate.pose, candidate.depth) else {
        return 0.0;
    };
    if points.is_empty() {
        return 0.0;
    }
    let total: f64 = window_poses
        .iter()
        .map(|pose| {
            let inside = points
                .iter()
                .filter(|p| {
                    let pc = pose.world_to_camera(p);
                    matches!(window_camera.project(&pc), Some((x, y)) if window_camera.contains(x, y))
                })
                .count();
            inside as f64 / points.len() as f64
        })
        .sum();
    total / window_poses.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn camera() -> CameraModel {
        CameraModel::new(16.0, 16.0, 16.0, 16.0, 32, 32).unwrap()
    }

    #[test]
    fn identical_pose_scores_one() {
        let cam = camera();
        let depth = vec![4.0; cam.num_pixels()];
        let pose = Pose::identity();
        let s = frustum_overlap_score(DepthView { camera: &cam, pose: &pose, depth: &depth }, &[pose, pose], &cam);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn opposite_yaw_scores_zero() {
        let cam = camera();
        let depth = vec![4.0; cam.num_pixels()];
        let pose = Pose::identity();
        let yaw = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        let back = Pose::new(yaw, Vector3::zeros()).unwrap();
        let s = frustum_overlap_score(DepthView { camera: &cam, pose: &pose, depth: &depth }, &[back], &cam);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn half_shifted_plane_scores_half() {
        // A fronto-parallel plane at depth 4 spans x in [-4, 4] for the
        // candidate; a window camera shifted by 4 sees x in [0, 8].
        let cam = camera();
        let depth = vec![4.0; cam.num_pixels()];
        let pose = Pose::identity();
        let shifted = Pose::from_translation(Vector3::new(4.0, 0.0, 0.0));
        let s = frustum_overlap_score(DepthView { camera: &cam, pose: &pose, depth: &depth }, &[shifted], &cam);
        assert!((s - 0.5).abs() <= 0.05, "score {s}");
    }
}
