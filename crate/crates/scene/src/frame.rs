use scenegen_geometry::{CameraModel, Pose};

/// An RGB image with its camera, pose and optional ground-truth maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedFrame {
    /// `height × width × 3`, values in `[0, 1]`.
    pub image: Vec<f32>,
    /// `height × width` z-depth in world units.
    pub depth: Option<Vec<f64>>,
    /// `height × width` semantic class ids.
    pub semantic: Option<Vec<u8>>,
    pub pose: Pose,
    pub camera: CameraModel,
}

impl PosedFrame {
    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn pixel(&self, u: usize, v: usize) -> [f32; 3] {
        let o = (v * self.camera.width + u) * 3;
        [self.image[o], self.image[o + 1], self.image[o + 2]]
    }

    pub fn mean_depth(&self) -> Option<f64> {
        self.depth.as_ref().map(|d| d.iter().sum::<f64>() / d.len() as f64)
    }
}
