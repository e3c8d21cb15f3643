use nalgebra::Vector3;

use crate::camera::{CameraModel, Pose};
use crate::error::{GeometryError, Result};

/// World points carrying `channels`-dimensional features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePointCloud {
    pub points: Vec<Vector3<f64>>,
    /// `points.len() × channels`, row-major.
    pub features: Vec<f64>,
    pub channels: usize,
    pub source_view_ids: Vec<usize>,
}

impl FeaturePointCloud {
    pub fn new(
        points: Vec<Vector3<f64>>,
        features: Vec<f64>,
        channels: usize,
        source_view_ids: Vec<usize>,
    ) -> Result<Self> {
        if features.len() != points.len() * channels || source_view_ids.len() != points.len() {
            return Err(GeometryError::ShapeMismatch {
                expected: format!("{} points x {channels} channels", points.len()),
                got: format!("{} feature values, {} view ids", features.len(), source_view_ids.len()),
            });
        }
        Ok(Self { points, features, channels, source_view_ids })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn feature(&self, index: usize) -> &[f64] {
        &self.features[index * self.channels..(index + 1) * self.channels]
    }
}

/// Point that won the z-buffer at a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatHit {
    pub index: usize,
    pub depth: f64,
}

/// Features, depths and visibility of `frames` target views, each
/// `height × width`, row-major per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedCondition {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub features: Vec<f64>,
    /// Zero where invisible.
    pub depths: Vec<f64>,
    pub visibility: Vec<bool>,
}

impl RenderedCondition {
    pub fn pixels_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn frame_depths(&self, frame: usize) -> &[f64] {
        let n = self.pixels_per_frame();
        &self.depths[frame * n..(frame + 1) * n]
    }

    pub fn frame_visibility(&self, frame: usize) -> &[bool] {
        let n = self.pixels_per_frame();
        &self.visibility[frame * n..(frame + 1) * n]
    }
}

/// Pixel and camera-frame depth of a world point, or `None` when it falls
/// behind the camera or outside the image.
pub fn project_point(camera: &CameraModel, pose: &Pose, p: &Vector3<f64>) -> Option<(usize, usize, f64)> {
    let pc = pose.world_to_camera(p);
    let (x, y) = camera.project(&pc)?;
    let (u, v) = camera.pixel_at(x, y)?;
    Some((u, v, pc.z))
}

/// Z-buffer winner per pixel of the target view. Ties in depth go to the
/// lower source view id, then to the lower point index.
pub fn splat_winners(
    points: &[Vector3<f64>],
    source_view_ids: &[usize],
    camera: &CameraModel,
    pose: &Pose,
) -> Vec<Option<SplatHit>> {
    let mut buffer: Vec<Option<SplatHit>> = vec![None; camera.num_pixels()];
    for (index, p) in points.iter().enumerate() {
        let Some((u, v, depth)) = project_point(camera, pose, p) else {
            continue;
        };
        let slot = &mut buffer[v * camera.width + u];
        let wins = match slot {
            None => true,
            Some(cur) => {
                (depth, source_view_ids[index], index) < (cur.depth, source_view_ids[cur.index], cur.index)
            }
        };
        if wins {
            *slot = Some(SplatHit { index, depth });
        }
    }
    buffer
}

/// Renders the cloud's features and depths into each target view with a
/// one-pixel nearest-point z-buffer. Invisible pixels carry zero features.
pub fn splat_render(cloud: &FeaturePointCloud, targets: &[(CameraModel, Pose)]) -> Result<RenderedCondition> {
    if cloud.is_empty() {
        return Err(GeometryError::Empty("point cloud"));
    }
    let Some((first, _)) = targets.first() else {
        return Err(GeometryError::Empty("target views"));
    };
    let (height, width, channels) = (first.height, first.width, cloud.channels);
    let n = height * width;
    let mut features = vec![0.0; targets.len() * n * channels];
    let mut depths = vec![0.0; targets.len() * n];
    let mut visibility = vec![false; targets.len() * n];
    for (f, (camera, pose)) in targets.iter().enumerate() {
        if camera.width != width || camera.height != height {
            return Err(GeometryError::ShapeMismatch {
                expected: format!("{height}x{width} target"),
                got: format!("{}x{}", camera.height, camera.width),
            });
        }
        let winners = splat_winners(&cloud.points, &cloud.source_view_ids, camera, pose);
        for (pix, hit) in winners.into_iter().enumerate() {
            if let Some(hit) = hit {
                let o = f * n + pix;
                visibility[o] = true;
                depths[o] = hit.depth;
                features[o * channels..(o + 1) * channels].copy_from_slice(cloud.feature(hit.index));
            }
        }
    }
    Ok(RenderedCondition { frames: targets.len(), height, width, channels, features, depths, visibility })
}
