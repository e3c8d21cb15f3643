//! Per-frame autoencoder, causal temporal compression and latent replacement.

use candle_core::{DType, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::nn::{depth_to_space, space_to_depth, Conv3x3, Linear, ParamGroup};

/// Latent channel count.
pub const LATENT_CHANNELS: usize = 16;
/// Spatial downsampling factor of the autoencoder.
pub const LATENT_STRIDE: usize = 8;
/// Pixel frames summarized by one latent frame (after the first).
pub const TEMPORAL_GROUP: usize = 4;

/// Number of latent frames for `n_frames` pixel frames.
pub fn latent_frame_count(n_frames: usize) -> Result<usize> {
    if n_frames == 0 || n_frames % TEMPORAL_GROUP != 1 {
        return Err(invalid(format!("frame count {n_frames} is not 1 mod {TEMPORAL_GROUP}")));
    }
    Ok(1 + (n_frames - 1) / TEMPORAL_GROUP)
}

/// Pixel frames summarized by each latent frame: `[0]`, `[1..=4]`, `[5..=8]`, ...
pub fn frame_map(n_frames: usize) -> Result<Vec<Vec<usize>>> {
    let n = latent_frame_count(n_frames)?;
    Ok((0..n)
        .map(|j| if j == 0 { vec![0] } else { (TEMPORAL_GROUP * (j - 1) + 1..=TEMPORAL_GROUP * j).collect() })
        .collect())
}

/// Latent frame that pixel frame `i` belongs to.
pub fn latent_index_of(i: usize) -> usize {
    if i == 0 {
        0
    } else {
        (i - 1) / TEMPORAL_GROUP + 1
    }
}

/// Last pixel frame of each latent frame's group.
pub fn group_last_frames(n_frames: usize) -> Result<Vec<usize>> {
    Ok(frame_map(n_frames)?.into_iter().map(|g| *g.last().unwrap()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    /// Channel widths of the three stages.
    pub widths: [usize; 3],
}

impl Default for AeConfig {
    fn default() -> Self {
        Self { widths: [32, 64, 128] }
    }
}

/// Deterministic convolutional autoencoder, 8× spatial downsampling to
/// 16 channels. Encoded latents are standardized per channel with stored
/// dataset statistics.
pub struct Autoencoder {
    pub group: ParamGroup,
    enc: Vec<Conv3x3>,
    enc_out: Linear,
    dec_in: Linear,
    dec: Vec<Conv3x3>,
    norm_mean: crate::nn::Param,
    norm_std: crate::nn::Param,
}

impl Autoencoder {
    pub fn new(cfg: &AeConfig, dtype: DType, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut g = ParamGroup::new("ae", dtype);
        let [w0, w1, w2] = cfg.widths;
        let enc = vec![
            Conv3x3::new(&mut g, "enc0a", 12, w0, rng)?,
            Conv3x3::new(&mut g, "enc0b", w0, w0, rng)?,
            Conv3x3::new(&mut g, "enc1a", 4 * w0, w1, rng)?,
            Conv3x3::new(&mut g, "enc1b", w1, w1, rng)?,
            Conv3x3::new(&mut g, "enc2a", 4 * w1, w2, rng)?,
            Conv3x3::new(&mut g, "enc2b", w2, w2, rng)?,
        ];
        let enc_out = Linear::new(&mut g, "enc_out", w2, LATENT_CHANNELS, (1.0 / w2 as f64).sqrt(), rng)?;
        let dec_in = Linear::new(&mut g, "dec_in", LATENT_CHANNELS, w2, (1.0 / LATENT_CHANNELS as f64).sqrt(), rng)?;
        let dec = vec![
            Conv3x3::new(&mut g, "dec2a", w2, w2, rng)?,
            Conv3x3::new(&mut g, "dec2b", w2, 4 * w1, rng)?,
            Conv3x3::new(&mut g, "dec1a", w1, w1, rng)?,
            Conv3x3::new(&mut g, "dec1b", w1, 4 * w0, rng)?,
            Conv3x3::new(&mut g, "dec0a", w0, w0, rng)?,
            Conv3x3::new(&mut g, "dec0b", w0, 12, rng)?,
        ];
        let norm_mean = g.zeros("norm.mean", &[LATENT_CHANNELS])?;
        let norm_std = g.ones("norm.std", &[LATENT_CHANNELS])?;
        Ok(Self { group: g, enc, enc_out, dec_in, dec, norm_mean, norm_std })
    }

    /// Variables updated by reconstruction training (excludes the latent
    /// statistics).
    pub fn trainable_vars(&self) -> Vec<candle_core::Var> {
        self.group
            .entries()
            .iter()
            .filter(|(n, _)| !n.starts_with("norm."))
            .map(|(_, p)| p.var().clone())
            .collect()
    }

    fn check_image(x: &Tensor) -> Result<(usize, usize, usize)> {
        let (b, h, w, c) = x.dims4()?;
        if c != 3 {
            return Err(shape_err("autoencoder input channels", 3, c));
        }
        if h % LATENT_STRIDE != 0 || w % LATENT_STRIDE != 0 {
            return Err(invalid(format!("image size {h}×{w} is not divisible by {LATENT_STRIDE}")));
        }
        Ok((b, h, w))
    }

    /// `(b, H, W, 3)` in `[0, 1]` → unnormalized latents `(b, H/8, W/8, 16)`.
    pub fn encode_raw(&self, x: &Tensor) -> Result<Tensor> {
        Self::check_image(x)?;
        let mut h = space_to_depth(&(x - 0.5)?, 2)?;
        h = self.enc[1].forward(&self.enc[0].forward(&h)?.silu()?)?.silu()?;
        h = space_to_depth(&h, 2)?;
        h = self.enc[3].forward(&self.enc[2].forward(&h)?.silu()?)?.silu()?;
        h = space_to_depth(&h, 2)?;
        h = self.enc[5].forward(&self.enc[4].forward(&h)?.silu()?)?.silu()?;
        self.enc_out.forward(&h)
    }

    /// Unnormalized latents → images (not clamped).
    pub fn decode_raw(&self, z: &Tensor) -> Result<Tensor> {
        let (_, _, _, c) = z.dims4()?;
        if c != LATENT_CHANNELS {
            return Err(shape_err("autoencoder latent channels", LATENT_CHANNELS, c));
        }
        let mut h = self.dec_in.forward(z)?.silu()?;
        h = self.dec[1].forward(&self.dec[0].forward(&h)?.silu()?)?;
        h = depth_to_space(&h, 2)?.silu()?;
        h = self.dec[3].forward(&self.dec[2].forward(&h)?.silu()?)?;
        h = depth_to_space(&h, 2)?.silu()?;
        h = self.dec[5].forward(&self.dec[4].forward(&h)?.silu()?)?;
        Ok((depth_to_space(&h, 2)? + 0.5)?)
    }

    /// Images → standardized latents.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.encode_raw(x)?;
        Ok(z.broadcast_sub(self.norm_mean.t())?.broadcast_div(self.norm_std.t())?)
    }

    /// Standardized latents → images.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let z = z.broadcast_mul(self.norm_std.t())?.broadcast_add(self.norm_mean.t())?;
        self.decode_raw(&z)
    }

    /// Encodes a video `(b, N, H, W, 3)` frame by frame to `(b, N, h, w, 16)`.
    pub fn encode_video(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, h, w, c) = x.dims5()?;
        let z = self.encode(&x.reshape((b * n, h, w, c))?)?;
        let (_, lh, lw, lc) = z.dims4()?;
        Ok(z.reshape((b, n, lh, lw, lc))?)
    }

    pub fn decode_video(&self, z: &Tensor) -> Result<Tensor> {
        let (b, n, h, w, c) = z.dims5()?;
        let x = self.decode(&z.reshape((b * n, h, w, c))?)?;
        let (_, ih, iw, ic) = x.dims4()?;
        Ok(x.reshape((b, n, ih, iw, ic))?)
    }

    /// Stores per-channel statistics of raw latents `(.., 16)`.
    pub fn set_latent_stats(&self, mean: &[f64], std: &[f64]) -> Result<()> {
        if mean.len() != LATENT_CHANNELS || std.len() != LATENT_CHANNELS || std.iter().any(|s| *s <= 0.0) {
            return Err(invalid("latent statistics need 16 means and 16 positive deviations"));
        }
        let dev = self.group.device();
        let dt = self.group.dtype();
        self.norm_mean.var().set(&Tensor::from_slice(mean, LATENT_CHANNELS, dev)?.to_dtype(dt)?)?;
        self.norm_std.var().set(&Tensor::from_slice(std, LATENT_CHANNELS, dev)?.to_dtype(dt)?)?;
        Ok(())
    }

    pub fn latent_stats(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((crate::nn::to_f64_vec(self.norm_mean.t())?, crate::nn::to_f64_vec(self.norm_std.t())?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcnConfig {
    pub hidden: usize,
}

impl Default for CcnConfig {
    fn default() -> Self {
        Self { hidden: 64 }
    }
}

/// Causal temporal compression of rendered feature videos. Each output
/// frame is a 3×3 convolution stack over its four-frame group stacked along
/// channels; frame 0 is replicated to fill its group. The output adds a
/// learned residual to the group's last frame.
pub struct CausalCompressor {
    pub group: ParamGroup,
    conv1: Conv3x3,
    conv2: Conv3x3,
    out: Conv3x3,
}

impl CausalCompressor {
    pub fn new(cfg: &CcnConfig, dtype: DType, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut g = ParamGroup::new("ccn", dtype);
        let c = LATENT_CHANNELS;
        let conv1 = Conv3x3::new(&mut g, "conv1", TEMPORAL_GROUP * c, cfg.hidden, rng)?;
        let conv2 = Conv3x3::new(&mut g, "conv2", cfg.hidden, cfg.hidden, rng)?;
        let out = Conv3x3::zero(&mut g, "out", cfg.hidden, c)?;
        Ok(Self { group: g, conv1, conv2, out })
    }

    /// `(b, N, h, w, c)` → `(b, n, h, w, c)` with `n = 1 + (N − 1)/4`.
    pub fn forward(&self, rendered: &Tensor) -> Result<Tensor> {
        let (b, n_frames, h, w, c) = rendered.dims5()?;
        if c != LATENT_CHANNELS {
            return Err(shape_err("compressor channels", LATENT_CHANNELS, c));
        }
        let n = latent_frame_count(n_frames)?;
        let first = rendered.narrow(1, 0, 1)?;
        let padded = Tensor::cat(&[&first, &first, &first, rendered], 1)?;
        let groups = padded
            .reshape((b, n, TEMPORAL_GROUP, h, w, c))?
            .permute((0, 1, 3, 4, 2, 5))?
            .reshape((b * n, h, w, TEMPORAL_GROUP * c))?;
        let skip = groups.narrow(3, (TEMPORAL_GROUP - 1) * c, c)?;
        let y = self.conv2.forward(&self.conv1.forward(&groups)?.silu()?)?.silu()?;
        let z = (self.out.forward(&y)? + skip)?;
        Ok(z.reshape((b, n, h, w, c))?)
    }
}

/// A latent video with the pixel frames each latent frame summarizes.
#[derive(Debug, Clone)]
pub struct LatentClip {
    /// `(b, n, h, w, c)`.
    pub data: Tensor,
    pub frame_map: Vec<Vec<usize>>,
}

impl LatentClip {
    pub fn new(data: Tensor, n_frames: usize) -> Result<Self> {
        let map = frame_map(n_frames)?;
        let n = data.dims5()?.1;
        if n != map.len() {
            return Err(shape_err("latent clip frames", map.len(), n));
        }
        Ok(Self { data, frame_map: map })
    }

    pub fn latent_frames(&self) -> usize {
        self.frame_map.len()
    }

    pub fn pixel_frames(&self) -> usize {
        self.frame_map.last().and_then(|g| g.last()).map_or(0, |l| l + 1)
    }

    /// Repeats each latent frame over the pixel frames it summarizes,
    /// giving `(b, N, h, w, c)`.
    pub fn broadcast_to_frames(&self) -> Result<Tensor> {
        let ids: Vec<u32> = (0..self.pixel_frames()).map(|i| latent_index_of(i) as u32).collect();
        let ids = Tensor::from_vec(ids, self.pixel_frames(), self.data.device())?;
        Ok(self.data.index_select(&ids, 1)?)
    }
}

/// Compressed spatial condition with one latent frame replaced by the
/// encoding of a temporal condition frame.
#[derive(Debug, Clone)]
pub struct SpatiotemporalCondition {
    pub z_st: LatentClip,
    pub replaced_index: usize,
    /// `(b, N, h, w)` splat visibility, kept for diagnostics.
    pub visibility: Option<Tensor>,
}

/// Replaces latent frame `index` of `z_spat` with `z_temp` `(b, h, w, c)`.
pub fn replace_latent_frame(z_spat: &LatentClip, z_temp: &Tensor, index: usize) -> Result<LatentClip> {
    let (b, n, h, w, c) = z_spat.data.dims5()?;
    if index >= n {
        return Err(invalid(format!("latent index {index} out of range for {n} frames")));
    }
    if z_temp.dims() != [b, h, w, c] {
        return Err(shape_err("temporal latent", [b, h, w, c], z_temp.dims()));
    }
    let mut parts = Vec::with_capacity(3);
    if index > 0 {
        parts.push(z_spat.data.narrow(1, 0, index)?);
    }
    parts.push(z_temp.unsqueeze(1)?.to_dtype(z_spat.data.dtype())?);
    if index + 1 < n {
        parts.push(z_spat.data.narrow(1, index + 1, n - index - 1)?);
    }
    Ok(LatentClip { data: Tensor::cat(&parts, 1)?, frame_map: z_spat.frame_map.clone() })
}

pub fn temporal_replace(
    z_spat: &LatentClip,
    z_temp: &Tensor,
    latent_index: usize,
    visibility: Option<Tensor>,
) -> Result<SpatiotemporalCondition> {
    Ok(SpatiotemporalCondition {
        z_st: replace_latent_frame(z_spat, z_temp, latent_index)?,
        replaced_index: latent_index,
        visibility,
    })
}

/// How a window's pose list is extended so that a temporal condition at
/// pixel frame `k > 0` occupies one whole latent frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalInsertion {
    /// For each frame of the extended list, the original frame it repeats.
    pub sources: Vec<usize>,
    /// Position of each original frame in the extended list.
    pub positions: Vec<usize>,
    /// Latent frame made of the four copies of frame `k`.
    pub latent_index: usize,
}

impl TemporalInsertion {
    /// Frames `0..k` are kept, copies of frame `k − 1` pad until frame `k`
    /// starts a group, frame `k` is repeated to fill that group, and copies
    /// of the last frame pad the end back to `N' ≡ 1 (mod 4)`. For `k = 0`
    /// the list is unchanged.
    pub fn plan(n_frames: usize, k: usize) -> Result<Self> {
        latent_frame_count(n_frames)?;
        if k >= n_frames {
            return Err(invalid(format!("temporal frame {k} outside a window of {n_frames}")));
        }
        if k == 0 {
            return Ok(Self { sources: (0..n_frames).collect(), positions: (0..n_frames).collect(), latent_index: 0 });
        }
        let mut sources: Vec<usize> = (0..k).collect();
        while sources.len() % TEMPORAL_GROUP != 1 {
            sources.push(k - 1);
        }
        let start = sources.len();
        sources.extend(std::iter::repeat(k).take(TEMPORAL_GROUP));
        sources.extend(k + 1..n_frames);
        while sources.len() % TEMPORAL_GROUP != 1 {
            sources.push(n_frames - 1);
        }
        let mut positions: Vec<usize> = (0..n_frames).map(|i| sources.iter().position(|&s| s == i).unwrap()).collect();
        positions[k] = start;
        Ok(Self { sources, positions, latent_index: latent_index_of(start) })
    }

    pub fn extended_len(&self) -> usize {
        self.sources.len()
    }

    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        self.sources.iter().map(|&i| items[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        for (n, l) in [(1, 1), (13, 4), (25, 7), (33, 9), (49, 13)] {
            assert_eq!(latent_frame_count(n).unwrap(), l);
        }
        assert!(latent_frame_count(12).is_err());
        assert_eq!(frame_map(9).unwrap(), vec![vec![0], vec![1, 2, 3, 4], vec![5, 6, 7, 8]]);
    }

    #[test]
    fn insertion_at_zero_is_identity() {
        let p = TemporalInsertion::plan(13, 0).unwrap();
        assert_eq!(p.sources, (0..13).collect::<Vec<_>>());
        assert_eq!(p.latent_index, 0);
    }

    #[test]
    fn insertion_group_holds_only_copies_of_k() {
        for k in 1..13 {
            let p = TemporalInsertion::plan(13, k).unwrap();
            assert_eq!(p.extended_len() % 4, 1);
            let map = frame_map(p.extended_len()).unwrap();
            let group = &map[p.latent_index];
            assert!(group.iter().all(|&i| p.sources[i] == k), "k={k}: {:?}", p.sources);
            for (i, &pos) in p.positions.iter().enumerate() {
                assert_eq!(p.sources[pos], i);
            }
        }
    }
}
