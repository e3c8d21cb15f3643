//! Latent video transformer with factorized space/time attention, and the
//! ControlNet branch that conditions it.

use candle_core::{DType, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, shape_err, Result};
use crate::latent::LATENT_CHANNELS;
use crate::nn::{layer_norm_plain, sinusoidal, Linear, Mlp, Param, ParamGroup, SelfAttention};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub blocks: usize,
    pub hidden: usize,
    pub heads: usize,
    pub mlp: usize,
    /// Blocks copied into each ControlNet.
    pub control_blocks: usize,
    /// Latent grid `h·w`.
    pub grid: usize,
    /// Length of the cosine schedule the timesteps index into.
    pub schedule_steps: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self { blocks: 4, hidden: 64, heads: 4, mlp: 256, control_blocks: 2, grid: 64, schedule_steps: 1000 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.control_blocks > self.blocks {
            return Err(invalid(format!("{} control blocks exceed {} blocks", self.control_blocks, self.blocks)));
        }
        if self.hidden % self.heads != 0 || self.hidden % 2 != 0 {
            return Err(invalid(format!("width {} incompatible with {} heads", self.hidden, self.heads)));
        }
        Ok(())
    }
}

fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    // shift/scale are (b, d); x is (b, n, l, d)
    let shift = shift.unsqueeze(1)?.unsqueeze(1)?;
    let scale = (scale.unsqueeze(1)?.unsqueeze(1)? + 1.0)?;
    Ok(layer_norm_plain(x, 1e-6)?.broadcast_mul(&scale)?.broadcast_add(&shift)?)
}

fn gate(x: &Tensor, g: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&g.unsqueeze(1)?.unsqueeze(1)?)?)
}

struct Block {
    ada: Linear,
    spatial: SelfAttention,
    temporal: SelfAttention,
    mlp: Mlp,
}

impl Block {
    fn new(g: &mut ParamGroup, i: usize, cfg: &DenoiserConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.hidden;
        let std = 0.02;
        Ok(Self {
            ada: Linear::zero(g, &format!("b{i}.ada"), d, 9 * d)?,
            spatial: SelfAttention::new(g, &format!("b{i}.spatial"), d, cfg.heads, std, rng)?,
            temporal: SelfAttention::new(g, &format!("b{i}.temporal"), d, cfg.heads, std, rng)?,
            mlp: Mlp::new(g, &format!("b{i}.mlp"), d, cfg.mlp, std, rng)?,
        })
    }

    /// `x` is `(b, n, l, d)`: n frames of l tokens; `c` is `(b, d)`.
    fn forward(&self, x: &Tensor, c: &Tensor) -> Result<Tensor> {
        let (b, n, l, d) = x.dims4()?;
        let m = self.ada.forward(&c.silu()?)?.chunk(9, 1)?;
        let h = modulate(x, &m[0], &m[1])?.reshape((b * n, l, d))?;
        let h = self.spatial.forward(&h)?.reshape((b, n, l, d))?;
        let x = (x + gate(&h, &m[2])?)?;
        let h = modulate(&x, &m[3], &m[4])?.transpose(1, 2)?.contiguous()?.reshape((b * l, n, d))?;
        let h = self.temporal.forward(&h)?.reshape((b, l, n, d))?.transpose(1, 2)?.contiguous()?;
        let x = (x + gate(&h, &m[5])?)?;
        let h = self.mlp.forward(&modulate(&x, &m[6], &m[7])?)?;
        Ok((x + gate(&h, &m[8])?)?)
    }
}

/// Token embedding shared in layout by the backbone and its ControlNets.
struct Embed {
    in_proj: Linear,
    pos: Param,
    t1: Linear,
    t2: Linear,
    null_text: Param,
    hidden: usize,
}

impl Embed {
    fn new(g: &mut ParamGroup, cfg: &DenoiserConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.hidden;
        Ok(Self {
            in_proj: Linear::new(g, "in_proj", LATENT_CHANNELS, d, (1.0 / LATENT_CHANNELS as f64).sqrt(), rng)?,
            pos: g.normal("pos", &[cfg.grid, d], 0.02, rng)?,
            t1: Linear::new(g, "t1", d, d, 0.02, rng)?,
            t2: Linear::new(g, "t2", d, d, 0.02, rng)?,
            null_text: g.normal("null_text", &[d], 0.02, rng)?,
            hidden: d,
        })
    }

    /// Returns tokens `(b, n, l, d)` and the conditioning vector `(b, d)`.
    fn forward(&self, z: &Tensor, t: &[f64]) -> Result<(Tensor, Tensor)> {
        let (b, n, h, w, c) = z.dims5()?;
        let l = h * w;
        if self.pos.var().dims()[0] != l {
            return Err(shape_err("denoiser grid", self.pos.var().dims()[0], l));
        }
        if t.len() != b {
            return Err(shape_err("denoiser timesteps", b, t.len()));
        }
        let dt = z.dtype();
        let dev = z.device();
        let x = self.in_proj.forward(&z.reshape((b, n, l, c))?)?;
        let frames: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let temporal = sinusoidal(&frames, self.hidden, dt, dev)?.unsqueeze(1)?;
        let x = x.broadcast_add(self.pos.t())?.broadcast_add(&temporal)?;
        let temb = sinusoidal(t, self.hidden, dt, dev)?;
        let cvec = self.t2.forward(&self.t1.forward(&temb)?.silu()?)?.broadcast_add(self.null_text.t())?;
        Ok((x, cvec))
    }
}

/// The frozen backbone: predicts the noise added to a latent video.
///
/// The transformer output `y` is mixed with the input as
/// `ε̂ = √ᾱ_t·y + √(1 − ᾱ_t)·z_t`, so `y` regresses the velocity
/// `√ᾱ_t·ε − √(1 − ᾱ_t)·z0` and the clean-latent estimate stays bounded
/// near pure noise.
pub struct Denoiser {
    pub group: ParamGroup,
    pub cfg: DenoiserConfig,
    alpha_bar: Vec<f64>,
    embed: Embed,
    blocks: Vec<Block>,
    final_ada: Linear,
    out: Linear,
}

impl Denoiser {
    pub fn new(cfg: &DenoiserConfig, dtype: DType, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut g = ParamGroup::new("backbone", dtype);
        let embed = Embed::new(&mut g, cfg, rng)?;
        let blocks = (0..cfg.blocks).map(|i| Block::new(&mut g, i, cfg, rng)).collect::<Result<Vec<_>>>()?;
        let final_ada = Linear::zero(&mut g, "final_ada", cfg.hidden, 2 * cfg.hidden)?;
        let out = Linear::zero(&mut g, "out", cfg.hidden, LATENT_CHANNELS)?;
        let alpha_bar = NoiseSchedule::cosine(cfg.schedule_steps)?.alpha_bar;
        Ok(Self { group: g, cfg: cfg.clone(), alpha_bar, embed, blocks, final_ada, out })
    }

    fn alpha_bar_at(&self, t: f64) -> Result<f64> {
        let i = t.round();
        if !(0.0..self.alpha_bar.len() as f64).contains(&i) {
            return Err(invalid(format!("timestep {t} outside [0, {})", self.alpha_bar.len())));
        }
        Ok(self.alpha_bar[i as usize])
    }

    /// `z_t (b, n, h, w, c)` → predicted noise of the same shape. `residuals`
    /// are added to the outputs of the leading blocks; an empty slice means
    /// no control.
    pub fn forward(&self, z_t: &Tensor, t: &[f64], residuals: &[Tensor]) -> Result<Tensor> {
        if residuals.len() > self.blocks.len() {
            return Err(shape_err("control residuals", self.blocks.len(), residuals.len()));
        }
        let (b, n, h, w, c) = z_t.dims5()?;
        let (mut x, cvec) = self.embed.forward(z_t, t)?;
        for (i, blk) in self.blocks.iter().enumerate() {
            x = blk.forward(&x, &cvec)?;
            if let Some(r) = residuals.get(i) {
                if r.dims() != x.dims() {
                    return Err(shape_err("control residual", x.dims(), r.dims()));
                }
                x = (x + r)?;
            }
        }
        let m = self.final_ada.forward(&cvec.silu()?)?.chunk(2, 1)?;
        let y = self.out.forward(&modulate(&x, &m[0], &m[1])?)?.reshape((b, n, h, w, c))?;
        let mut eps = Vec::with_capacity(b);
        for (i, &ti) in t.iter().enumerate() {
            let ab = self.alpha_bar_at(ti)?;
            let yi = (y.narrow(0, i, 1)? * ab.sqrt())?;
            eps.push((yi + (z_t.narrow(0, i, 1)? * (1.0 - ab).sqrt())?)?);
        }
        Ok(Tensor::cat(&eps, 0)?)
    }
}

/// Trainable copy of the backbone's embedding and leading blocks. The
/// condition enters through a zero-initialized projection and every block
/// output leaves through a zero-initialized projection, so a fresh branch
/// returns exactly zero residuals.
pub struct ControlNet {
    pub group: ParamGroup,
    pub cond_dim: usize,
    embed: Embed,
    cond_in: Linear,
    blocks: Vec<Block>,
    zero_out: Vec<Linear>,
}

impl ControlNet {
    pub fn new(name: &str, cfg: &DenoiserConfig, cond_dim: usize, dtype: DType, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut g = ParamGroup::new(name, dtype);
        let embed = Embed::new(&mut g, cfg, rng)?;
        let blocks = (0..cfg.control_blocks).map(|i| Block::new(&mut g, i, cfg, rng)).collect::<Result<Vec<_>>>()?;
        let cond_in = Linear::zero(&mut g, "cond_in", cond_dim, cfg.hidden)?;
        let zero_out = (0..cfg.control_blocks)
            .map(|i| Linear::zero(&mut g, &format!("zero{i}"), cfg.hidden, cfg.hidden))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { group: g, cond_dim, embed, cond_in, blocks, zero_out })
    }

    /// Copies the embedding and leading blocks from the backbone.
    pub fn init_from_backbone(&self, backbone: &Denoiser) -> Result<usize> {
        self.group.copy_matching(&backbone.group)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// `cond` is `(b, n, h, w, cond_dim)` aligned with `z_t`.
    pub fn forward(&self, z_t: &Tensor, t: &[f64], cond: &Tensor) -> Result<Vec<Tensor>> {
        let (b, n, h, w, _) = z_t.dims5()?;
        let cd = cond.dims5()?;
        if (cd.0, cd.1, cd.2, cd.3, cd.4) != (b, n, h, w, self.cond_dim) {
            return Err(shape_err("control condition", (b, n, h, w, self.cond_dim), cond.dims()));
        }
        let (x, cvec) = self.embed.forward(z_t, t)?;
        let mut x = (x + self.cond_in.forward(&cond.reshape((b, n, h * w, self.cond_dim))?)?)?;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (blk, z) in self.blocks.iter().zip(&self.zero_out) {
            x = blk.forward(&x, &cvec)?;
            out.push(z.forward(&x)?);
        }
        Ok(out)
    }
}
