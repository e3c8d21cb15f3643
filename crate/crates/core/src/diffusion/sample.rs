use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{combine_controls, ControlNet, Denoiser, NoiseSchedule};
use crate::error::{invalid, Result};
use crate::nn::randn;

/// One ControlNet with its condition `(1, N, h, w, c)` and weight.
pub struct ControlInput<'a> {
    pub net: &'a ControlNet,
    pub cond: Tensor,
    pub weight: f64,
}

/// Noise prediction with the weighted sum of all control residuals.
pub fn predict_noise(backbone: &Denoiser, controls: &[ControlInput<'_>], z_t: &Tensor, t: &[f64]) -> Result<Tensor> {
    let residuals = controls.iter().map(|c| c.net.forward(z_t, t, &c.cond)).collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = controls.iter().map(|c| c.weight).collect();
    let combined = combine_controls(&weights, &residuals)?;
    backbone.forward(z_t, t, &combined)
}

/// Deterministic DDIM sampling of a `(1, N, h, w, 16)` latent video from
/// noise drawn with `seed`.
pub fn sample_latents(
    backbone: &Denoiser,
    schedule: &NoiseSchedule,
    controls: &[ControlInput<'_>],
    shape: &[usize],
    steps: usize,
    seed: u64,
    x0_clip: Option<f64>,
) -> Result<Tensor> {
    if shape.len() != 5 || shape[0] != 1 {
        return Err(invalid(format!("sampling shape {shape:?} is not (1, N, h, w, c)")));
    }
    let group = &backbone.group;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = randn(&mut rng, shape, group.dtype(), group.device())?;
    let ts = schedule.sampling_timesteps(steps)?;
    for (i, &t) in ts.iter().enumerate() {
        let eps = predict_noise(backbone, controls, &x, &[t as f64])?.detach();
        x = schedule.ddim_step(&x, &eps, t, ts.get(i + 1).copied(), x0_clip)?.detach();
    }
    Ok(x)
}
