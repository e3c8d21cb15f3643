//! Latent video denoising: schedule, backbone, ControlNets, losses.

mod combine;
mod denoiser;
mod losses;
mod sample;
mod schedule;

pub use combine::{combine_controls, ControlCombination};
pub use denoiser::{ControlNet, Denoiser, DenoiserConfig};
pub use losses::{
    depth_loss, diffusion_loss, latent_loss, pi_normalize, total_loss, LossBreakdown, LossParts, LossWeights,
};
pub use sample::{predict_noise, sample_latents, ControlInput};
pub use schedule::NoiseSchedule;
