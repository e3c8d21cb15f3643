use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{GeometryError, Result};

const ORTHO_TOL: f64 = 1e-6;

/// Pinhole intrinsics plus image size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let camera = Self { fx, fy, cx, cy, width, height };
        camera.validate()?;
        Ok(camera)
    }

    /// Square image with the principal point at the image center and the
    /// given horizontal field of view in degrees.
    pub fn with_fov(size: usize, fov_deg: f64) -> Result<Self> {
        let half = size as f64 / 2.0;
        let f = half / (fov_deg.to_radians() / 2.0).tan();
        Self::new(f, f, half, half, size, size)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidCamera("zero image size".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// The same camera observed on a grid `factor` times coarser.
    pub fn downscaled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(GeometryError::InvalidCamera(format!(
                "cannot downscale {}x{} by {factor}",
                self.width, self.height
            )));
        }
        let s = factor as f64;
        Self::new(
            self.fx / s,
            self.fy / s,
            self.cx / s,
            self.cy / s,
            self.width / factor,
            self.height / factor,
        )
    }

    /// Camera-frame direction through image point `(x, y)` with unit z
    /// component (not normalized).
    pub fn direction_through(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    /// Camera-frame direction through the center of pixel `(u, v)`, unit z.
    pub fn pixel_direction(&self, u: usize, v: usize) -> Vector3<f64> {
        self.direction_through(u as f64 + 0.5, v as f64 + 0.5)
    }

    /// Projects a camera-frame point to continuous image coordinates.
    /// Returns `None` for points with non-positive depth.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<(f64, f64)> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some((self.fx * p_cam.x / p_cam.z + self.cx, self.fy * p_cam.y / p_cam.z + self.cy))
    }

    /// Pixel whose center is nearest to continuous image coordinates, if
    /// inside the image. Ties go to the pixel containing the point.
    pub fn pixel_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.contains(x, y) {
            return None;
        }
        Some((x.floor() as usize, y.floor() as usize))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }
}

/// Rigid camera-to-world transform: `p_world = rotation * p_cam + translation`.
/// The translation is the camera center in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Camera at `eye` looking at `target`, with `up` giving the world up
    /// direction (the camera's y axis points opposite to it).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(GeometryError::InvalidPose("eye coincides with target".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(GeometryError::InvalidPose("view direction parallel to up".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self::new(rotation, eye)
    }

    pub fn validate(&self) -> Result<()> {
        let rtr = self.rotation.transpose() * self.rotation;
        let err = (rtr - Matrix3::identity()).abs().max();
        if !(err <= ORTHO_TOL) {
            return Err(GeometryError::InvalidPose(format!("rotation not orthonormal (error {err:.3e})")));
        }
        let det = self.rotation.determinant();
        if !((det - 1.0).abs() <= ORTHO_TOL) {
            return Err(GeometryError::InvalidPose(format!("rotation determinant {det}")));
        }
        if !self.translation.iter().all(|t| t.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite translation".into()));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    pub fn camera_to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_cam + self.translation
    }

    pub fn world_to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_world - self.translation)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Geodesic angle between the two rotations, in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let r = self.rotation * other.rotation.transpose();
        ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let r = &self.rotation;
        PoseRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        let rotation = Matrix3::from_fn(|i, j| repr.rotation[i][j]);
        let t = repr.translation;
        Pose::new(rotation, Vector3::new(t[0], t[1], t[2])).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(CameraModel::new(0.0, 1.0, 4.0, 4.0, 8, 8).is_err());
        assert!(CameraModel::new(1.0, 1.0, 8.0, 4.0, 8, 8).is_err());
        assert!(CameraModel::new(1.0, 1.0, 4.0, 4.0, 8, 8).is_ok());
    }

    #[test]
    fn look_at_points_forward() {
        let pose = Pose::look_at(Vector3::new(0.0, 1.0, 5.0), Vector3::new(0.0, 1.0, 0.0), Vector3::y()).unwrap();
        assert!((pose.forward() - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        // camera y axis points down in the world
        assert!((pose.rotation.column(1) - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        let p = pose.world_to_camera(&Vector3::new(0.0, 1.0, 0.0));
        assert!((p - Vector3::new(0.0, 0.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let pose = Pose::look_at(Vector3::new(1.0, 2.0, 3.0), Vector3::new(-1.0, 0.5, 0.0), Vector3::y()).unwrap();
        let id = pose.compose(&pose.inverse());
        assert!((id.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn pose_serde_round_trip() {
        let pose = Pose::look_at(Vector3::new(1.0, 2.0, 3.0), Vector3::zeros(), Vector3::y()).unwrap();
        let text = serde_json::to_string(&pose).unwrap();
        let back: Pose = serde_json::from_str(&text).unwrap();
        assert_eq!(pose, back);
    }

    #[test]
    fn pixel_rounding_uses_centers() {
        let cam = CameraModel::new(8.0, 8.0, 4.0, 4.0, 8, 8).unwrap();
        assert_eq!(cam.pixel_at(4.0, 4.0), Some((4, 4)));
        assert_eq!(cam.pixel_at(4.49, 3.51), Some((4, 3)));
        assert_eq!(cam.pixel_at(8.0, 1.0), None);
        assert_eq!(cam.pixel_at(-0.01, 1.0), None);
        assert_eq!(cam.pixel_at(0.0, 0.0), Some((0, 0)));
    }
}
