//! Feature splatting with gradients.
//!
//! Winner selection reuses the exact z-buffer from the geometry crate on
//! detached values; the selected features and the depths of the winning
//! points are then gathered with tensor ops so gradients reach the
//! regressed features and distances. Winner selection itself is treated as
//! a constant.

use candle_core::{Tensor, D};
use scenegen_geometry::{compute_rays, splat_winners, CameraModel, Pose, Vector3};

use crate::error::{shape_err, Result};
use crate::nn::{sigmoid, to_f64_vec};

/// Point cloud of one sample: `K = views·h·w` points.
pub struct DiffCloud {
    /// `(K,)` raw distances.
    pub raw: Tensor,
    /// `(K, c)`.
    pub features: Tensor,
    pub origins: Vec<Vector3<f64>>,
    pub directions: Vec<Vector3<f64>>,
    pub view_ids: Vec<usize>,
    pub near: f64,
    pub far: f64,
}

impl DiffCloud {
    /// Builds the cloud from per-view latent-grid outputs `raw (v, h, w)` and
    /// `features (v, h, w, c)`, with rays from the latent-resolution cameras.
    pub fn from_views(
        raw: &Tensor,
        features: &Tensor,
        cameras: &[CameraModel],
        poses: &[Pose],
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let (v, h, w) = raw.dims3()?;
        let c = features.dim(D::Minus1)?;
        if cameras.len() != v || poses.len() != v {
            return Err(shape_err("cloud views", v, (cameras.len(), poses.len())));
        }
        let mut origins = Vec::with_capacity(v * h * w);
        let mut directions = Vec::with_capacity(v * h * w);
        let mut view_ids = Vec::with_capacity(v * h * w);
        for (i, (cam, pose)) in cameras.iter().zip(poses).enumerate() {
            if cam.width != w || cam.height != h {
                return Err(shape_err("cloud camera", (h, w), (cam.height, cam.width)));
            }
            let rays = compute_rays(cam, pose);
            origins.extend(rays.origins);
            directions.extend(rays.directions);
            view_ids.extend(std::iter::repeat(i).take(h * w));
        }
        Ok(Self {
            raw: raw.flatten_all()?,
            features: features.reshape((v * h * w, c))?,
            origins,
            directions,
            view_ids,
            near,
            far,
        })
    }

    pub fn len(&self) -> usize {
        self.view_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view_ids.is_empty()
    }

    /// Ray distances `(K,)`, differentiable.
    pub fn distances(&self) -> Result<Tensor> {
        Ok(((sigmoid(&self.raw)? * (self.far - self.near))? + self.near)?)
    }

    pub fn points(&self) -> Result<Vec<Vector3<f64>>> {
        let dist = to_f64_vec(&self.distances()?)?;
        Ok(self.origins.iter().zip(&self.directions).zip(&dist).map(|((o, d), t)| o + d * *t).collect())
    }
}

/// Rendered condition with differentiable features and depths.
pub struct DiffRendered {
    /// `(N, h, w, c)`, zero where invisible.
    pub features: Tensor,
    /// `(N, h, w)` z-depth, zero where invisible.
    pub depths: Tensor,
    /// `(N, h, w)` as 0/1 in the feature dtype.
    pub visibility: Tensor,
    pub visible: Vec<bool>,
}

pub fn render_diff(cloud: &DiffCloud, targets: &[(CameraModel, Pose)]) -> Result<DiffRendered> {
    let k = cloud.len();
    let c = cloud.features.dim(1)?;
    let dtype = cloud.features.dtype();
    let dev = cloud.features.device().clone();
    let points = cloud.points()?;
    let (h, w) = (targets[0].0.height, targets[0].0.width);
    let total = targets.len() * h * w;
    let mut index = Vec::with_capacity(total);
    let mut a = Vec::with_capacity(total);
    let mut bcoef = Vec::with_capacity(total);
    let mut visible = Vec::with_capacity(total);
    for (cam, pose) in targets {
        if cam.width != w || cam.height != h {
            return Err(shape_err("splat targets", (h, w), (cam.height, cam.width)));
        }
        let rt = pose.rotation.transpose();
        for hit in splat_winners(&points, &cloud.view_ids, cam, pose) {
            match hit {
                Some(hit) => {
                    // target z-depth is affine in the ray distance
                    let o = rt * (cloud.origins[hit.index] - pose.translation);
                    let d = rt * cloud.directions[hit.index];
                    index.push(hit.index as u32);
                    a.push(o.z);
                    bcoef.push(d.z);
                    visible.push(true);
                }
                None => {
                    index.push(k as u32);
                    a.push(0.0);
                    bcoef.push(0.0);
                    visible.push(false);
                }
            }
        }
    }
    let idx = Tensor::from_vec(index, total, &dev)?;
    let zero_feat = Tensor::zeros((1, c), dtype, &dev)?;
    let feats = Tensor::cat(&[&cloud.features, &zero_feat], 0)?.index_select(&idx, 0)?;
    let dist = Tensor::cat(&[&cloud.distances()?, &Tensor::zeros(1, dtype, &dev)?], 0)?.index_select(&idx, 0)?;
    let a = Tensor::from_vec(a, total, &dev)?.to_dtype(dtype)?;
    let bcoef = Tensor::from_vec(bcoef, total, &dev)?.to_dtype(dtype)?;
    let depths = (dist * bcoef)?.add(&a)?;
    let vis: Vec<f64> = visible.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let n = targets.len();
    Ok(DiffRendered {
        features: feats.reshape((n, h, w, c))?,
        depths: depths.reshape((n, h, w))?,
        visibility: Tensor::from_vec(vis, (n, h, w), &dev)?.to_dtype(dtype)?,
        visible,
    })
}
