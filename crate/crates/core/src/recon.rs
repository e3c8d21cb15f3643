//! Feed-forward reconstruction transformer: two posed views in, per-pixel
//! ray distance and latent features out.

use candle_core::{DType, Device, Tensor, D};
use rand_chacha::ChaCha8Rng;
use scenegen_geometry::{compute_plucker_map, CameraModel, Pose};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::latent::LATENT_CHANNELS;
use crate::nn::{depth_to_space, sigmoid, space_to_depth, LayerNorm, Linear, Mlp, ParamGroup, SelfAttention};

/// Input channels per pixel: RGB, depth, ray direction, ray moment.
pub const LRM_INPUT_CHANNELS: usize = 10;
/// Output channels per pixel: one raw distance plus the latent features.
pub const LRM_OUTPUT_CHANNELS: usize = 1 + LATENT_CHANNELS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrmConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp: usize,
    pub patch: usize,
}

impl Default for LrmConfig {
    fn default() -> Self {
        Self { layers: 4, hidden: 128, heads: 4, mlp: 512, patch: 8 }
    }
}

/// One conditioning view.
#[derive(Debug, Clone, Copy)]
pub struct LrmView<'a> {
    /// `H × W × 3`.
    pub image: &'a [f32],
    /// `H × W` scale-free depth.
    pub depth: &'a [f64],
    pub camera: CameraModel,
    pub pose: Pose,
}

/// Stacked per-view inputs `(b, 2, H, W, 10)`.
#[derive(Debug, Clone)]
pub struct LrmInput {
    pub data: Tensor,
    pub cameras: Vec<[CameraModel; 2]>,
    pub poses: Vec<[Pose; 2]>,
}

/// Builds the input for a batch of view pairs. Channel order is
/// `[r, g, b, depth, dx, dy, dz, mx, my, mz]`.
pub fn assemble_lrm_input(pairs: &[[LrmView<'_>; 2]], dtype: DType) -> Result<LrmInput> {
    let first = pairs.first().ok_or_else(|| invalid("empty batch"))?[0].camera;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(pairs.len() * 2 * h * w * LRM_INPUT_CHANNELS);
    for pair in pairs {
        for view in pair {
            if view.camera.width != w || view.camera.height != h {
                return Err(invalid(format!(
                    "view resolution {}×{} differs from {w}×{h}",
                    view.camera.width, view.camera.height
                )));
            }
            if view.image.len() != h * w * 3 || view.depth.len() != h * w {
                return Err(shape_err("view buffers", (h * w * 3, h * w), (view.image.len(), view.depth.len())));
            }
            let pl = compute_plucker_map(&view.camera, &view.pose);
            for i in 0..h * w {
                data.extend(view.image[i * 3..i * 3 + 3].iter().map(|&v| v as f64));
                data.push(view.depth[i]);
                data.extend_from_slice(&pl.data[i]);
            }
        }
    }
    let t = Tensor::from_vec(data, (pairs.len(), 2, h, w, LRM_INPUT_CHANNELS), &Device::Cpu)?.to_dtype(dtype)?;
    Ok(LrmInput {
        data: t,
        cameras: pairs.iter().map(|p| [p[0].camera, p[1].camera]).collect(),
        poses: pairs.iter().map(|p| [p[0].pose, p[1].pose]).collect(),
    })
}

/// Raw distance `(b, 2, H, W)` and features `(b, 2, H, W, 16)`.
#[derive(Debug, Clone)]
pub struct LrmOutput {
    pub raw_distance: Tensor,
    pub features: Tensor,
}

struct Block {
    ln1: LayerNorm,
    attn: SelfAttention,
    ln2: LayerNorm,
    mlp: Mlp,
}

pub struct Lrm {
    pub group: ParamGroup,
    pub cfg: LrmConfig,
    embed: Linear,
    pos: crate::nn::Param,
    ln_in: LayerNorm,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    head: Linear,
}

impl Lrm {
    /// `grid` is the number of patches per image, `(H/p)·(W/p)`.
    pub fn new(cfg: &LrmConfig, grid: usize, dtype: DType, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut g = ParamGroup::new("lrm", dtype);
        let d = cfg.hidden;
        let std = 0.02;
        let patch_dim = cfg.patch * cfg.patch * LRM_INPUT_CHANNELS;
        let embed = Linear::new(&mut g, "embed", patch_dim, d, std, rng)?;
        let pos = g.normal("pos", &[grid, d], std, rng)?;
        let ln_in = LayerNorm::new(&mut g, "ln_in", d)?;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for i in 0..cfg.layers {
            blocks.push(Block {
                ln1: LayerNorm::new(&mut g, &format!("b{i}.ln1"), d)?,
                attn: SelfAttention::new(&mut g, &format!("b{i}.attn"), d, cfg.heads, std, rng)?,
                ln2: LayerNorm::new(&mut g, &format!("b{i}.ln2"), d)?,
                mlp: Mlp::new(&mut g, &format!("b{i}.mlp"), d, cfg.mlp, std, rng)?,
            });
        }
        let ln_out = LayerNorm::new(&mut g, "ln_out", d)?;
        let head = Linear::zero(&mut g, "head", d, cfg.patch * cfg.patch * LRM_OUTPUT_CHANNELS)?;
        Ok(Self { group: g, cfg: cfg.clone(), embed, pos, ln_in, blocks, ln_out, head })
    }

    pub fn forward(&self, input: &LrmInput) -> Result<LrmOutput> {
        let (b, v, h, w, c) = input.data.dims5()?;
        let p = self.cfg.patch;
        if v != 2 || c != LRM_INPUT_CHANNELS {
            return Err(shape_err("reconstruction input", (2, LRM_INPUT_CHANNELS), (v, c)));
        }
        if h % p != 0 || w % p != 0 {
            return Err(invalid(format!("patch size {p} does not divide {h}×{w}")));
        }
        let (hp, wp) = (h / p, w / p);
        if self.pos.var().dims()[0] != hp * wp {
            return Err(shape_err("reconstruction patch grid", self.pos.var().dims()[0], hp * wp));
        }
        let x = input.data.reshape((b * 2, h, w, c))?;
        // scale-free depth: log of depth over its per-view mean
        let depth = x.narrow(3, 3, 1)?.clamp(1e-6, f64::INFINITY)?;
        let mean = depth.mean_keepdim(1)?.mean_keepdim(2)?;
        let log_depth = depth.broadcast_div(&mean)?.log()?;
        let x = Tensor::cat(&[&x.narrow(3, 0, 3)?, &log_depth, &x.narrow(3, 4, 6)?], 3)?;
        let tokens = space_to_depth(&x, p)?.reshape((b, 2 * hp * wp, p * p * c))?;
        let mut t = self.embed.forward(&tokens)?;
        let pos = Tensor::cat(&[self.pos.t(), self.pos.t()], 0)?;
        t = t.broadcast_add(&pos)?;
        t = self.ln_in.forward(&t)?;
        for blk in &self.blocks {
            t = (&t + blk.attn.forward(&blk.ln1.forward(&t)?)?)?;
            t = (&t + blk.mlp.forward(&blk.ln2.forward(&t)?)?)?;
        }
        let t = self.ln_out.forward(&t)?;
        let out = self.head.forward(&t)?.reshape((b * 2, hp, wp, p * p * LRM_OUTPUT_CHANNELS))?;
        let out = depth_to_space(&out, p)?.reshape((b, 2, h, w, LRM_OUTPUT_CHANNELS))?;
        Ok(LrmOutput {
            raw_distance: out.narrow(4, 0, 1)?.squeeze(4)?,
            features: out.narrow(4, 1, LATENT_CHANNELS)?,
        })
    }
}

/// Ray distance `near·(1 − σ) + far·σ` of the raw output.
pub fn regressed_depth(raw_distance: &Tensor, near: f64, far: f64) -> Result<Tensor> {
    if !(near > 0.0 && far > near) {
        return Err(invalid(format!("invalid range near={near}, far={far}")));
    }
    Ok(((sigmoid(raw_distance)? * (far - near))? + near)?)
}

/// `p × p` average pooling of `(b, 2, H, W, ...)` maps to the latent grid.
pub fn pool_to_latent(output: &LrmOutput, p: usize) -> Result<LrmOutput> {
    let (b, v, h, w) = output.raw_distance.dims4()?;
    let pool = |t: &Tensor, c: usize| -> Result<Tensor> {
        let t = t.reshape((b * v, h / p, p, w / p, p, c))?;
        Ok(t.mean(4)?.mean(2)?.reshape((b, v, h / p, w / p, c))?)
    };
    let raw = pool(&output.raw_distance.unsqueeze(D::Minus1)?, 1)?.squeeze(4)?;
    let feats = pool(&output.features, LATENT_CHANNELS)?;
    Ok(LrmOutput { raw_distance: raw, features: feats })
}
