//! The full generator: autoencoder, reconstruction model, compressor,
//! frozen backbone and the three ControlNets, plus the conditioning path
//! that turns posed views into a ControlNet input.

use std::collections::BTreeSet;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use scenegen_geometry::{CameraModel, Pose};
use scenegen_scene::SemanticClass;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::diffusion::{ControlNet, Denoiser, NoiseSchedule};
use crate::error::{invalid, shape_err, CoreError, Result};
use crate::latent::{
    latent_frame_count, temporal_replace, Autoencoder, CausalCompressor, LatentClip, SpatiotemporalCondition,
    LATENT_CHANNELS, LATENT_STRIDE,
};
use crate::nn::{init_rng, space_to_depth, to_f32_vec, to_f64_vec, ParamGroup};
use crate::recon::{assemble_lrm_input, pool_to_latent, Lrm, LrmView};
use crate::splat_diff::{render_diff, DiffCloud};

/// Parameter group names in checkpoint order.
pub const GROUP_NAMES: [&str; 7] =
    ["ae", "ccn", "lrm", "backbone", "controlnet_scvg", "controlnet_depth", "controlnet_semantic"];

/// Channels of the depth-layout condition: inverse depth, space-to-depth.
pub const DEPTH_COND_CHANNELS: usize = LATENT_STRIDE * LATENT_STRIDE;
/// Channels of the semantic-layout condition: one-hot classes, space-to-depth.
pub const SEMANTIC_COND_CHANNELS: usize = SemanticClass::COUNT * LATENT_STRIDE * LATENT_STRIDE;

/// Ablation switches. Each removes one ingredient of the conditioning path
/// or of training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    pub no_spatial_cond: bool,
    pub no_temporal_cond: bool,
    pub no_depth_input: bool,
    pub no_depth_loss: bool,
    pub fix_lrm: bool,
    pub use_gt_depth_cloud: bool,
}

impl Ablations {
    const NAMES: [&'static str; 6] =
        ["no_spatial_cond", "no_temporal_cond", "no_depth_input", "no_depth_loss", "fix_lrm", "use_gt_depth_cloud"];

    fn fields(&self) -> [bool; 6] {
        [
            self.no_spatial_cond,
            self.no_temporal_cond,
            self.no_depth_input,
            self.no_depth_loss,
            self.fix_lrm,
            self.use_gt_depth_cloud,
        ]
    }

    pub fn to_flags(&self) -> Vec<String> {
        Self::NAMES.iter().zip(self.fields()).filter(|(_, on)| *on).map(|(n, _)| n.to_string()).collect()
    }

    pub fn from_flags(flags: &[String]) -> Result<Self> {
        let set: BTreeSet<&str> = flags.iter().map(String::as_str).collect();
        if let Some(bad) = set.iter().find(|f| !Self::NAMES.contains(f)) {
            return Err(CoreError::Checkpoint(format!("unknown ablation flag {bad:?}")));
        }
        Ok(Self {
            no_spatial_cond: set.contains("no_spatial_cond"),
            no_temporal_cond: set.contains("no_temporal_cond"),
            no_depth_input: set.contains("no_depth_input"),
            no_depth_loss: set.contains("no_depth_loss"),
            fix_lrm: set.contains("fix_lrm"),
            use_gt_depth_cloud: set.contains("use_gt_depth_cloud"),
        })
    }

    /// Union of two switch sets.
    pub fn merge(self, other: Ablations) -> Ablations {
        Ablations {
            no_spatial_cond: self.no_spatial_cond || other.no_spatial_cond,
            no_temporal_cond: self.no_temporal_cond || other.no_temporal_cond,
            no_depth_input: self.no_depth_input || other.no_depth_input,
            no_depth_loss: self.no_depth_loss || other.no_depth_loss,
            fix_lrm: self.fix_lrm || other.fix_lrm,
            use_gt_depth_cloud: self.use_gt_depth_cloud || other.use_gt_depth_cloud,
        }
    }
}

/// A posed conditioning view at model resolution.
#[derive(Debug, Clone, Copy)]
pub struct CondView<'a> {
    /// `H × W × 3` in `[0, 1]`.
    pub image: &'a [f32],
    /// `H × W` depth fed to the reconstruction model (any scale).
    pub depth: &'a [f64],
    /// Metric depth, used only with `use_gt_depth_cloud`.
    pub gt_depth: Option<&'a [f64]>,
    pub pose: Pose,
}

/// Output of the spatial branch for one window.
pub struct SpatialRender {
    /// Compressed rendered features, `(1, n, h, w, 16)`.
    pub z_spat: LatentClip,
    /// Splatted z-depth at latent resolution, `(N, h, w)`.
    pub depths: Tensor,
    /// Per-pixel visibility at latent resolution, `N·h·w`.
    pub visible: Vec<bool>,
    /// Visibility as `(1, N, h, w)` 0/1 values.
    pub visibility: Tensor,
}

pub struct SceneModel {
    pub cfg: RunConfig,
    pub ablations: Ablations,
    pub ae: Autoencoder,
    pub ccn: CausalCompressor,
    pub lrm: Lrm,
    pub backbone: Denoiser,
    pub scvg: ControlNet,
    pub depth_net: ControlNet,
    pub semantic_net: ControlNet,
    pub schedule: NoiseSchedule,
    pub stage: String,
}

impl SceneModel {
    /// Freshly initialized model; every group is seeded from `seed` and its
    /// name. ControlNets start as copies of the backbone.
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let dt = cfg.candle_dtype();
        let grid = (cfg.image_size / cfg.lrm_patch).pow(2);
        let den = cfg.denoiser();
        let model = Self {
            ae: Autoencoder::new(&cfg.ae(), dt, &mut init_rng(seed, "ae"))?,
            ccn: CausalCompressor::new(&cfg.ccn(), dt, &mut init_rng(seed, "ccn"))?,
            lrm: Lrm::new(&cfg.lrm(), grid, dt, &mut init_rng(seed, "lrm"))?,
            backbone: Denoiser::new(&den, dt, &mut init_rng(seed, "backbone"))?,
            scvg: ControlNet::new(
                "controlnet_scvg",
                &den,
                LATENT_CHANNELS,
                dt,
                &mut init_rng(seed, "controlnet_scvg"),
            )?,
            depth_net: ControlNet::new(
                "controlnet_depth",
                &den,
                DEPTH_COND_CHANNELS,
                dt,
                &mut init_rng(seed, "controlnet_depth"),
            )?,
            semantic_net: ControlNet::new(
                "controlnet_semantic",
                &den,
                SEMANTIC_COND_CHANNELS,
                dt,
                &mut init_rng(seed, "controlnet_semantic"),
            )?,
            schedule: NoiseSchedule::cosine(cfg.diffusion_steps)?,
            cfg: cfg.clone(),
            ablations: Ablations::default(),
            stage: "init".into(),
        };
        model.copy_backbone_into_controlnets()?;
        Ok(model)
    }

    pub fn copy_backbone_into_controlnets(&self) -> Result<()> {
        for net in [&self.scvg, &self.depth_net, &self.semantic_net] {
            net.init_from_backbone(&self.backbone)?;
        }
        Ok(())
    }

    pub fn dtype(&self) -> DType {
        self.cfg.candle_dtype()
    }

    pub fn device(&self) -> &Device {
        self.ae.group.device()
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel::with_fov(self.cfg.image_size, 60.0).expect("validated image size")
    }

    pub fn latent_camera(&self) -> CameraModel {
        self.camera().downscaled(LATENT_STRIDE).expect("image size divisible by the latent stride")
    }

    pub fn groups(&self) -> [&ParamGroup; 7] {
        [
            &self.ae.group,
            &self.ccn.group,
            &self.lrm.group,
            &self.backbone.group,
            &self.scvg.group,
            &self.depth_net.group,
            &self.semantic_net.group,
        ]
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups().into_iter().find(|g| g.name() == name)
    }

    pub fn freeze_all(&self) {
        for g in self.groups() {
            g.set_frozen(true);
        }
    }

    pub fn to_checkpoint(&self, parent: Option<String>) -> Result<Checkpoint> {
        let groups = self.groups().iter().map(|g| Ok((g.name().to_string(), g.to_host()?))).collect::<Result<_>>()?;
        Ok(Checkpoint {
            stage: self.stage.clone(),
            config: self.cfg.to_text(),
            parent,
            flags: self.ablations.to_flags(),
            groups,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = RunConfig::parse(&ckpt.config)?;
        let mut model = Self::new(&cfg, 0)?;
        for g in model.groups() {
            let tensors = ckpt
                .group(g.name())
                .ok_or_else(|| CoreError::Checkpoint(format!("missing parameter group {}", g.name())))?;
            g.load_host(tensors)?;
        }
        if ckpt.groups.len() != GROUP_NAMES.len() {
            return Err(CoreError::Checkpoint(format!("expected {} groups, found {}", GROUP_NAMES.len(), ckpt.groups.len())));
        }
        model.ablations = Ablations::from_flags(&ckpt.flags)?;
        model.stage = ckpt.stage.clone();
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Stacks `H × W × 3` images into `(k, H, W, 3)`.
    pub fn image_batch(&self, images: &[&[f32]]) -> Result<Tensor> {
        let s = self.cfg.image_size;
        let mut data = Vec::with_capacity(images.len() * s * s * 3);
        for img in images {
            if img.len() != s * s * 3 {
                return Err(shape_err("image", s * s * 3, img.len()));
            }
            data.extend_from_slice(img);
        }
        Ok(Tensor::from_vec(data, (images.len(), s, s, 3), self.device())?.to_dtype(self.dtype())?)
    }

    /// Encodes frames to standardized latents `(1, k, h, w, 16)`.
    pub fn encode_frames(&self, images: &[&[f32]]) -> Result<Tensor> {
        let z = self.ae.encode(&self.image_batch(images)?)?.detach();
        Ok(z.unsqueeze(0)?)
    }

    /// Decodes `(1, N, h, w, 16)` latents into `[0, 1]`-clamped images.
    pub fn decode_frames(&self, z: &Tensor) -> Result<Vec<Vec<f32>>> {
        let x = self.ae.decode_video(z)?.clamp(0.0, 1.0)?;
        let (_, n, h, w, c) = x.dims5()?;
        let flat = to_f32_vec(&x)?;
        Ok(flat.chunks(h * w * c).take(n).map(<[f32]>::to_vec).collect())
    }

    /// Spatially averaged latent of each frame, the feature used by the
    /// latent Fréchet distance.
    pub fn latent_features(&self, images: &[&[f32]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(16) {
            let z = self.encode_frames(chunk)?.squeeze(0)?.mean((1, 2))?;
            let flat = to_f64_vec(&z)?;
            out.extend(flat.chunks(LATENT_CHANNELS).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Reconstructs a feature cloud from two posed views and renders and
    /// compresses it along `targets`.
    pub fn spatial_render(&self, views: [CondView<'_>; 2], targets: &[Pose]) -> Result<SpatialRender> {
        let n_frames = targets.len();
        latent_frame_count(n_frames)?;
        let cam = self.camera();
        let lcam = self.latent_camera();
        let ones = vec![1.0; cam.num_pixels()];
        let lrm_views = views.map(|v| LrmView {
            image: v.image,
            depth: if self.ablations.no_depth_input { &ones[..] } else { v.depth },
            camera: cam,
            pose: v.pose,
        });
        let input = assemble_lrm_input(&[lrm_views], self.dtype())?;
        let out = pool_to_latent(&self.lrm.forward(&input)?, LATENT_STRIDE)?;
        let mut raw = out.raw_distance.squeeze(0)?;
        if self.ablations.use_gt_depth_cloud {
            raw = self.gt_raw_distance(&views)?;
        }
        let poses = [views[0].pose, views[1].pose];
        let cloud =
            DiffCloud::from_views(&raw, &out.features.squeeze(0)?, &[lcam, lcam], &poses, self.cfg.near, self.cfg.far)?;
        let targets: Vec<(CameraModel, Pose)> = targets.iter().map(|p| (lcam, *p)).collect();
        let rendered = render_diff(&cloud, &targets)?;
        let z = self.ccn.forward(&rendered.features.unsqueeze(0)?)?;
        Ok(SpatialRender {
            z_spat: LatentClip::new(z, n_frames)?,
            depths: rendered.depths,
            visible: rendered.visible,
            visibility: rendered.visibility.unsqueeze(0)?,
        })
    }

    /// Raw distances reproducing the pooled metric depth of each view.
    fn gt_raw_distance(&self, views: &[CondView<'_>; 2]) -> Result<Tensor> {
        let lcam = self.latent_camera();
        let s = self.cfg.image_size;
        let (near, far) = (self.cfg.near, self.cfg.far);
        let mut raw = Vec::with_capacity(2 * lcam.num_pixels());
        for v in views {
            let depth = v.gt_depth.ok_or_else(|| invalid("ground-truth depth cloud needs metric depth maps"))?;
            for lv in 0..lcam.height {
                for lu in 0..lcam.width {
                    let mut acc = 0.0;
                    for dy in 0..LATENT_STRIDE {
                        for dx in 0..LATENT_STRIDE {
                            acc += depth[(lv * LATENT_STRIDE + dy) * s + lu * LATENT_STRIDE + dx];
                        }
                    }
                    let z = acc / (LATENT_STRIDE * LATENT_STRIDE) as f64;
                    let dist = z * lcam.pixel_direction(lu, lv).norm();
                    let w = ((dist - near) / (far - near)).clamp(1e-4, 1.0 - 1e-4);
                    raw.push((w / (1.0 - w)).ln());
                }
            }
        }
        Ok(Tensor::from_vec(raw, (2, lcam.height, lcam.width), self.device())?.to_dtype(self.dtype())?)
    }

    /// Replaces latent frames with encoded temporal conditions. Each entry
    /// is `(latent index, image)`. With `no_spatial_cond` the spatial
    /// latent is zeroed first; with `no_temporal_cond` nothing is replaced.
    pub fn spatiotemporal(&self, spatial: &SpatialRender, temporal: &[(usize, &[f32])]) -> Result<SpatiotemporalCondition> {
        let mut clip = spatial.z_spat.clone();
        if self.ablations.no_spatial_cond {
            clip.data = clip.data.zeros_like()?;
        }
        let mut cond = SpatiotemporalCondition { z_st: clip, replaced_index: 0, visibility: Some(spatial.visibility.clone()) };
        if self.ablations.no_temporal_cond {
            return Ok(cond);
        }
        for &(index, image) in temporal {
            let z = self.encode_frames(&[image])?.squeeze(0)?;
            cond = temporal_replace(&cond.z_st, &z, index, cond.visibility.clone())?;
        }
        Ok(cond)
    }

    /// Depth and semantic layout conditions `(1, N, h, w, c)` from
    /// full-resolution maps.
    pub fn layout_conditions(&self, depths: &[&[f64]], semantics: &[&[u8]]) -> Result<(Tensor, Tensor)> {
        let s = self.cfg.image_size;
        let n = depths.len();
        if semantics.len() != n {
            return Err(shape_err("layout maps", n, semantics.len()));
        }
        let mut inv = Vec::with_capacity(n * s * s);
        let mut onehot = vec![0f32; n * s * s * SemanticClass::COUNT];
        for (i, (d, sem)) in depths.iter().zip(semantics).enumerate() {
            if d.len() != s * s || sem.len() != s * s {
                return Err(shape_err("layout map size", s * s, (d.len(), sem.len())));
            }
            inv.extend(d.iter().map(|z| (1.0 / z.max(1e-3)) as f32));
            for (p, &c) in sem.iter().enumerate() {
                let c = c as usize;
                if c >= SemanticClass::COUNT {
                    return Err(invalid(format!("semantic id {c} out of range")));
                }
                onehot[(i * s * s + p) * SemanticClass::COUNT + c] = 1.0;
            }
        }
        let dev = self.device();
        let dt = self.dtype();
        let d = Tensor::from_vec(inv, (n, s, s, 1), dev)?.to_dtype(dt)?;
        let m = Tensor::from_vec(onehot, (n, s, s, SemanticClass::COUNT), dev)?.to_dtype(dt)?;
        Ok((space_to_depth(&d, LATENT_STRIDE)?.unsqueeze(0)?, space_to_depth(&m, LATENT_STRIDE)?.unsqueeze(0)?))
    }
}
