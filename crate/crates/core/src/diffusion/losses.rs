//! Training objectives: scale-free depth, latent regression, noise
//! prediction, and their weighted sum.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

/// Min-max normalization of inverse depth to `[0, 1]`:
/// `(1/d − min)/(max − min)`. Returns `None` when the range is degenerate.
pub fn pi_normalize(depth: &[f64]) -> Option<Vec<f64>> {
    let inv: Vec<f64> = depth.iter().map(|d| 1.0 / d).collect();
    let lo = inv.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = inv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (inv.len() >= 2 && hi > lo).then(|| inv.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

fn pi_normalize_t(inv: &Tensor) -> Result<Tensor> {
    let lo = inv.min(0)?;
    let hi = inv.max(0)?;
    Ok(inv.broadcast_sub(&lo)?.broadcast_div(&(hi - &lo)?)?)
}

/// Scale-free depth loss over `V` novel views.
///
/// `rendered` and `mono` are `(V, h, w)`; `visible[v][p]` marks pixels where
/// the rendered depth exists. Each view contributes the summed squared
/// difference of normalized inverse depths over its visible pixels; views
/// with fewer than two visible pixels, or a flat visible range, contribute 0.
pub fn depth_loss(rendered: &Tensor, mono: &Tensor, visible: &[Vec<bool>]) -> Result<Tensor> {
    let (v, h, w) = rendered.dims3()?;
    if mono.dims() != rendered.dims() {
        return Err(shape_err("depth loss maps", rendered.dims(), mono.dims()));
    }
    if visible.len() != v || visible.iter().any(|m| m.len() != h * w) {
        return Err(shape_err("depth loss mask", (v, h * w), visible.len()));
    }
    let dev = rendered.device();
    let mut total = Tensor::zeros((), rendered.dtype(), dev)?;
    let rendered = rendered.reshape((v, h * w))?;
    let mono = mono.reshape((v, h * w))?;
    for (i, mask) in visible.iter().enumerate() {
        let idx: Vec<u32> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(p, _)| p as u32).collect();
        if idx.len() < 2 {
            log::warn!("depth loss: view {i} has {} visible pixels, skipped", idx.len());
            continue;
        }
        let idx = Tensor::from_vec(idx.clone(), idx.len(), dev)?;
        let r = rendered.get(i)?.index_select(&idx, 0)?.recip()?;
        let m = mono.get(i)?.index_select(&idx, 0)?.recip()?;
        if degenerate(&r)? || degenerate(&m)? {
            log::warn!("depth loss: view {i} has a flat inverse-depth range, skipped");
            continue;
        }
        let diff = (pi_normalize_t(&r)? - pi_normalize_t(&m)?)?;
        total = (total + diff.sqr()?.sum_all()?)?;
    }
    Ok(total)
}

fn degenerate(x: &Tensor) -> Result<bool> {
    let lo = crate::nn::scalar(&x.min(0)?)?;
    let hi = crate::nn::scalar(&x.max(0)?)?;
    Ok(!(hi > lo))
}

/// Mean squared error over visible latent cells.
///
/// `z` and `target` are `(b, n, h, w, c)`, `mask` is `(b, n, h, w)` with
/// values in `{0, 1}`. Returns 0 when nothing is visible.
pub fn latent_loss(z: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if z.dims() != target.dims() {
        return Err(shape_err("latent loss", z.dims(), target.dims()));
    }
    let (b, n, h, w, c) = z.dims5()?;
    if mask.dims() != [b, n, h, w] {
        return Err(shape_err("latent loss mask", [b, n, h, w], mask.dims()));
    }
    let count = crate::nn::scalar(&mask.sum_all()?)?;
    if count == 0.0 {
        return Ok(Tensor::zeros((), z.dtype(), z.device())?);
    }
    let sq = (z - target)?.sqr()?.broadcast_mul(&mask.unsqueeze(4)?)?;
    Ok((sq.sum_all()? / (count * c as f64))?)
}

/// `‖ε̂ − ε‖²` summed per sample and averaged over the batch.
pub fn diffusion_loss(eps_hat: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if eps_hat.dims() != eps.dims() {
        return Err(shape_err("diffusion loss", eps.dims(), eps_hat.dims()));
    }
    let b = eps.dim(0)?;
    Ok(((eps_hat - eps)?.sqr()?.sum_all()? / b as f64)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub depth: f64,
    pub latent: f64,
    pub diffusion: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { depth: 0.05, latent: 0.1, diffusion: 1.0 }
    }
}

impl LossWeights {
    pub fn new(depth: f64, latent: f64, diffusion: f64) -> Result<Self> {
        if [depth, latent, diffusion].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid(format!("loss weights ({depth}, {latent}, {diffusion}) must be nonnegative")));
        }
        Ok(Self { depth, latent, diffusion })
    }

    pub fn combine(&self, depth: f64, latent: f64, diffusion: f64) -> f64 {
        self.depth * depth + self.latent * latent + self.diffusion * diffusion
    }
}

/// Per-term loss tensors; absent terms are skipped.
#[derive(Debug, Clone, Default)]
pub struct LossParts {
    pub depth: Option<Tensor>,
    pub latent: Option<Tensor>,
    pub diffusion: Option<Tensor>,
}

/// Scalar values of each term, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub depth: f64,
    pub latent: f64,
    pub diffusion: f64,
    pub total: f64,
}

pub fn total_loss(parts: &LossParts, weights: &LossWeights, device: &Device) -> Result<(Tensor, LossBreakdown)> {
    let mut out = LossBreakdown::default();
    let mut acc: Option<Tensor> = None;
    for (part, w, slot) in [
        (&parts.depth, weights.depth, &mut out.depth),
        (&parts.latent, weights.latent, &mut out.latent),
        (&parts.diffusion, weights.diffusion, &mut out.diffusion),
    ] {
        if let Some(t) = part {
            *slot = crate::nn::scalar(t)?;
            let term = (t * w)?;
            acc = Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            });
        }
    }
    let total = match acc {
        Some(t) => t,
        None => Tensor::zeros((), candle_core::DType::F32, device)?,
    };
    out.total = crate::nn::scalar(&total)?;
    Ok((total, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::scalar;
    use candle_core::DType;

    #[test]
    fn pi_on_powers_of_two() {
        let p = pi_normalize(&[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(p[2], 0.0);
        assert!(pi_normalize(&[2.0, 2.0]).is_none());
    }

    #[test]
    fn invisible_views_contribute_nothing() {
        let d = Tensor::ones((2, 2, 2), DType::F64, &Device::Cpu).unwrap();
        let l = depth_loss(&d, &d, &[vec![false; 4], vec![true, false, false, false]]).unwrap();
        assert_eq!(scalar(&l).unwrap(), 0.0);
    }

    #[test]
    fn weighted_sum() {
        let w = LossWeights::default();
        assert!((w.combine(1.0, 1.0, 1.0) - 1.15).abs() < 1e-12);
        assert_eq!(LossWeights::new(0.0, 0.0, 0.0).unwrap().combine(3.0, 4.0, 5.0), 0.0);
        assert!(LossWeights::new(-1.0, 0.0, 0.0).is_err());
    }
}
