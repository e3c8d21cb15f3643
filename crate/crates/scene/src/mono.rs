use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SceneError};
use crate::frame::PosedFrame;

/// Parameters of the synthetic monocular depth predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonoDepthParams {
    pub scale: (f64, f64),
    pub shift: (f64, f64),
    /// Noise amplitude relative to depth; `|η| ≤ noise·D`.
    pub noise: f64,
}

impl Default for MonoDepthParams {
    fn default() -> Self {
        Self { scale: (0.5, 2.0), shift: (0.0, 0.5), noise: 0.02 }
    }
}

impl MonoDepthParams {
    /// Scale only: output is exactly `s·D`.
    pub fn scale_only() -> Self {
        Self { scale: (0.5, 2.0), shift: (0.0, 0.0), noise: 0.0 }
    }
}

/// Scale-free depth `s·D + t + η` with a random per-frame scale and shift and
/// a smooth multiplicative noise field. Pure function of `(frame, seed, params)`.
pub fn mono_depth_stub(frame: &PosedFrame, seed: u64, params: &MonoDepthParams) -> Result<Vec<f64>> {
    let depth = frame.depth.as_ref().ok_or(SceneError::MissingDepth)?;
    if params.scale.0 <= 0.0 || params.scale.0 > params.scale.1 || params.shift.0 > params.shift.1 || params.noise < 0.0 {
        return Err(SceneError::InvalidParams(format!("{params:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f_6e6f);
    let s = rng.random_range(params.scale.0..=params.scale.1);
    let t = rng.random_range(params.shift.0..=params.shift.1);
    // three low-frequency waves; the sum divided by 3 stays in [-1, 1]
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let (w, h) = (frame.width(), frame.height());
    let mut out = Vec::with_capacity(depth.len());
    for v in 0..h {
        for u in 0..w {
            let (x, y) = (u as f64 / w as f64, v as f64 / h as f64);
            let field = waves.iter().map(|(a, b, p)| (std::f64::consts::PI * (a * x + b * y) + p).sin()).sum::<f64>() / 3.0;
            let d = depth[v * w + u];
            out.push(s * d + t + params.noise * d * field);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use scenegen_geometry::{CameraModel, Pose};

    fn frame(depth: Vec<f64>) -> PosedFrame {
        PosedFrame {
            image: vec![0.0; 16 * 3],
            depth: Some(depth),
            semantic: None,
            pose: Pose::identity(),
            camera: CameraModel::with_fov(4, 60.0).unwrap(),
        }
    }

    #[test]
    fn deterministic() {
        let f = frame((1..=16).map(|i| i as f64).collect());
        let p = MonoDepthParams::default();
        assert_eq!(mono_depth_stub(&f, 3, &p).unwrap(), mono_depth_stub(&f, 3, &p).unwrap());
    }

    #[test]
    fn scale_only_is_proportional() {
        let d: Vec<f64> = (1..=16).map(|i| i as f64 * 0.7).collect();
        let out = mono_depth_stub(&frame(d.clone()), 9, &MonoDepthParams::scale_only()).unwrap();
        let s = out[0] / d[0];
        assert!((0.5..=2.0).contains(&s));
        for (o, d) in out.iter().zip(&d) {
            assert!((o - s * d).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_is_bounded() {
        let d: Vec<f64> = (1..=16).map(|i| i as f64).collect();
        let p = MonoDepthParams { scale: (1.0, 1.0), shift: (0.0, 0.0), noise: 0.02 };
        let out = mono_depth_stub(&frame(d.clone()), 1, &p).unwrap();
        for (o, d) in out.iter().zip(&d) {
            assert!((o - d).abs() <= 0.02 * d + 1e-12);
        }
    }

    #[test]
    fn rejects_missing_depth() {
        let mut f = frame(vec![1.0; 16]);
        f.depth = None;
        assert!(matches!(mono_depth_stub(&f, 0, &MonoDepthParams::default()), Err(SceneError::MissingDepth)));
    }
}
