use nalgebra::Vector3;

use crate::camera::{CameraModel, Pose};

/// Per-pixel world-space rays of one view, row-major (`v * width + u`).
#[derive(Debug, Clone, PartialEq)]
pub struct RayBundle {
    pub width: usize,
    pub height: usize,
    pub origins: Vec<Vector3<f64>>,
    /// Unit-length directions.
    pub directions: Vec<Vector3<f64>>,
}

/// Per-pixel Plücker coordinates `(d, o × d)` of a view, `height × width × 6`.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 6]>,
}

impl PluckerMap {
    pub fn at(&self, u: usize, v: usize) -> &[f64; 6] {
        &self.data[v * self.width + u]
    }

    pub fn direction(&self, u: usize, v: usize) -> Vector3<f64> {
        let p = self.at(u, v);
        Vector3::new(p[0], p[1], p[2])
    }

    pub fn moment(&self, u: usize, v: usize) -> Vector3<f64> {
        let p = self.at(u, v);
        Vector3::new(p[3], p[4], p[5])
    }
}

/// Rays through every pixel center of `camera` placed at `pose`.
pub fn compute_rays(camera: &CameraModel, pose: &Pose) -> RayBundle {
    let n = camera.num_pixels();
    let mut directions = Vec::with_capacity(n);
    for v in 0..camera.height {
        for u in 0..camera.width {
            directions.push((pose.rotation * camera.pixel_direction(u, v)).normalize());
        }
    }
    RayBundle {
        width: camera.width,
        height: camera.height,
        origins: vec![pose.center(); n],
        directions,
    }
}

pub fn compute_plucker_map(camera: &CameraModel, pose: &Pose) -> PluckerMap {
    let rays = compute_rays(camera, pose);
    let data = rays
        .origins
        .iter()
        .zip(&rays.directions)
        .map(|(o, d)| {
            let m = o.cross(d);
            [d.x, d.y, d.z, m.x, m.y, m.z]
        })
        .collect();
    PluckerMap { width: camera.width, height: camera.height, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn odd_camera() -> CameraModel {
        // principal point on a pixel center
        CameraModel::new(8.0, 8.0, 4.5, 4.5, 9, 9).unwrap()
    }

    #[test]
    fn identity_pose_principal_pixel() {
        let map = compute_plucker_map(&odd_camera(), &Pose::identity());
        assert!((map.direction(4, 4) - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        assert!(map.moment(4, 4).norm() < 1e-15);
    }

    #[test]
    fn translated_pose_moment() {
        let pose = Pose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let map = compute_plucker_map(&odd_camera(), &pose);
        assert!((map.direction(4, 4) - Vector3::z()).norm() < 1e-15);
        assert!((map.moment(4, 4) - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
    }
}
