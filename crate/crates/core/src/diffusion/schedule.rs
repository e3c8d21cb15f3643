use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Cosine ᾱ schedule over `T` discrete steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(invalid("a schedule needs at least two steps"));
        }
        let s = 0.008;
        let f = |t: f64| (((t / steps as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for i in 0..steps {
            let beta = (1.0 - f(i as f64 + 1.0) / f(i as f64)).min(0.999);
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Ok(Self { alpha_bar })
    }

    pub fn len(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_bar.is_empty()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or_else(|| invalid(format!("timestep {t} outside [0, {})", self.len())))
    }

    /// `√ᾱ_t·z0 + √(1 − ᾱ_t)·ε` with one timestep per batch element.
    pub fn q_sample(&self, z0: &Tensor, t: &[usize], eps: &Tensor) -> Result<Tensor> {
        let b = z0.dim(0)?;
        if t.len() != b {
            return Err(invalid(format!("{} timesteps for a batch of {b}", t.len())));
        }
        let mut parts = Vec::with_capacity(b);
        for (i, &ti) in t.iter().enumerate() {
            let ab = self.alpha_bar(ti)?;
            let zi = z0.narrow(0, i, 1)?;
            let ei = eps.narrow(0, i, 1)?;
            parts.push(((zi * ab.sqrt())? + (ei * (1.0 - ab).sqrt())?)?);
        }
        Ok(Tensor::cat(&parts, 0)?)
    }

    /// Descending timesteps for a `steps`-step sampler.
    pub fn sampling_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 || steps > self.len() {
            return Err(invalid(format!("cannot sample with {steps} steps from a {}-step schedule", self.len())));
        }
        let t = self.len();
        Ok((0..steps).map(|i| (steps - i) * t / steps - 1).collect())
    }

    /// One deterministic DDIM update from `t` to `t_prev` (`None` = clean).
    /// With `x0_clip`, the implied clean latent is clamped to `±x0_clip` and
    /// the noise estimate made consistent with it.
    pub fn ddim_step(
        &self,
        x_t: &Tensor,
        eps: &Tensor,
        t: usize,
        t_prev: Option<usize>,
        x0_clip: Option<f64>,
    ) -> Result<Tensor> {
        let ab = self.alpha_bar(t)?;
        let ab_prev = match t_prev {
            Some(p) => self.alpha_bar(p)?,
            None => 1.0,
        };
        let mut x0 = ((x_t - (eps * (1.0 - ab).sqrt())?)? / ab.sqrt())?;
        let mut eps = eps.clone();
        if let Some(c) = x0_clip {
            x0 = x0.clamp(-c, c)?;
            eps = ((x_t - (&x0 * ab.sqrt())?)? / (1.0 - ab).sqrt())?;
        }
        Ok(((x0 * ab_prev.sqrt())? + (eps * (1.0 - ab_prev).sqrt())?)?)
    }
}
