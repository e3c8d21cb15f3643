use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

/// Weighted ControlNets, by parameter-group name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlCombination {
    pub entries: Vec<(String, f64)>,
}

impl ControlCombination {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        if let Some((name, w)) = entries.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid(format!("control weight {w} for {name} must be nonnegative")));
        }
        Ok(Self { entries })
    }

    /// First layout window: semantic and depth nets.
    pub fn layout_first() -> Self {
        Self { entries: vec![("controlnet_semantic".into(), 0.5), ("controlnet_depth".into(), 0.5)] }
    }

    /// Later layout windows add the scene-conditioned net.
    pub fn layout_continue() -> Self {
        Self {
            entries: vec![
                ("controlnet_semantic".into(), 0.3),
                ("controlnet_depth".into(), 0.3),
                ("controlnet_scvg".into(), 0.4),
            ],
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, w)| *w).collect()
    }
}

/// Elementwise `Σ_j w_j · r_j[i]` over per-net residual lists.
pub fn combine_controls(weights: &[f64], residuals: &[Vec<Tensor>]) -> Result<Vec<Tensor>> {
    if weights.len() != residuals.len() {
        return Err(shape_err("control weights", residuals.len(), weights.len()));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(invalid(format!("control weight {w} must be nonnegative")));
    }
    let Some(first) = residuals.first() else {
        return Ok(Vec::new());
    };
    if let Some(bad) = residuals.iter().find(|r| r.len() != first.len()) {
        return Err(shape_err("control residual lists", first.len(), bad.len()));
    }
    (0..first.len())
        .map(|i| {
            let mut acc = (&residuals[0][i] * weights[0])?;
            for (r, &w) in residuals.iter().zip(weights).skip(1) {
                acc = (acc + (&r[i] * w)?)?;
            }
            Ok(acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::to_f64_vec;
    use candle_core::Device;

    fn list(v: f64) -> Vec<Tensor> {
        (0..2).map(|i| Tensor::full(v + i as f64, (2, 3), &Device::Cpu).unwrap()).collect()
    }

    #[test]
    fn unit_weight_selects_one_net() {
        let out = combine_controls(&[1.0, 0.0], &[list(0.7), list(-3.1)]).unwrap();
        for (o, r) in out.iter().zip(list(0.7)) {
            assert_eq!(to_f64_vec(o).unwrap(), to_f64_vec(&r).unwrap());
        }
    }

    #[test]
    fn halves_of_identical_sets() {
        let out = combine_controls(&[0.5, 0.5], &[list(0.3), list(0.3)]).unwrap();
        for (o, r) in out.iter().zip(list(0.3)) {
            assert_eq!(to_f64_vec(o).unwrap(), to_f64_vec(&r).unwrap());
        }
    }

    #[test]
    fn rejects_mismatch() {
        let mut short = list(1.0);
        short.pop();
        assert!(combine_controls(&[0.5, 0.5], &[list(1.0), short]).is_err());
        assert!(combine_controls(&[0.5], &[list(1.0), list(1.0)]).is_err());
        assert!(combine_controls(&[-0.5, 1.0], &[list(1.0), list(1.0)]).is_err());
        assert!(ControlCombination::new(vec![("a".into(), -1.0)]).is_err());
    }

    #[test]
    fn layout_weights() {
        assert_eq!(ControlCombination::layout_first().weights(), vec![0.5, 0.5]);
        assert_eq!(ControlCombination::layout_continue().weights(), vec![0.3, 0.3, 0.4]);
    }
}
