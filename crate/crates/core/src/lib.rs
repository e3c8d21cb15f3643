//! Reconstruction, latent video, and diffusion models for pose-controlled
//! scene video generation.

pub mod autoregression;
pub mod checkpoint;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod latent;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod recon;
pub mod splat_diff;
pub mod train;

pub use error::{CoreError, Result};
