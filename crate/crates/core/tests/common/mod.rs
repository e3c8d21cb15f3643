//! Micro configurations and gradient-check helpers shared by the core
//! integration tests.

#![allow(dead_code)]

use candle_core::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenegen_core::config::RunConfig;
use scenegen_core::nn::{randn, scalar, to_f64_vec, ParamGroup};
use scenegen_geometry::CameraModel;
use scenegen_scene::{generate_dataset, ClipRecord, DatasetParams, TrajectoryKind, TrajectoryParams};

/// A model small enough to train and sample in seconds.
pub fn micro_config(image_size: usize, dtype: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("model.image_size", image_size.to_string()),
        ("model.dtype", dtype.to_string()),
        ("model.window", "5".into()),
        ("ae.width0", "8".into()),
        ("ae.width1", "8".into()),
        ("ae.width2", "8".into()),
        ("ccn.hidden", "8".into()),
        ("lrm.layers", "1".into()),
        ("lrm.hidden", "16".into()),
        ("lrm.heads", "2".into()),
        ("lrm.mlp", "32".into()),
        ("denoiser.blocks", "2".into()),
        ("denoiser.hidden", "16".into()),
        ("denoiser.heads", "2".into()),
        ("denoiser.mlp", "32".into()),
        ("denoiser.control_blocks", "1".into()),
        ("diffusion.sample_steps", "5".into()),
        ("train.log_every", "0".into()),
        ("train.warmup", "5".into()),
    ] {
        cfg.set(k, &v).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

/// Rendered records at `image_size` pixels.
pub fn micro_records(image_size: usize, length: usize, kinds: &[TrajectoryKind], records: usize, seed: u64) -> Vec<ClipRecord> {
    let params = DatasetParams {
        seed,
        scenes: 1,
        records_per_scene: records,
        record_length: length,
        kinds: kinds.to_vec(),
        trajectory: TrajectoryParams { camera: CameraModel::with_fov(image_size, 60.0).unwrap(), ..Default::default() },
        ..Default::default()
    };
    generate_dataset(&params).unwrap()
}

/// Overwrites every all-zero parameter of `group` with small Gaussian
/// values, so gradients flow through zero-initialized projections.
pub fn randomize_zero_params(group: &ParamGroup, rng: &mut ChaCha8Rng, std: f64) {
    for (_, p) in group.entries() {
        let t = p.var().as_tensor();
        if to_f64_vec(t).unwrap().iter().all(|v| *v == 0.0) {
            let r = (randn(rng, t.dims(), t.dtype(), t.device()).unwrap() * std).unwrap();
            p.var().set(&r).unwrap();
        }
    }
}

/// Named variables of the given groups.
pub fn named_vars(groups: &[&ParamGroup]) -> Vec<(String, Var)> {
    groups
        .iter()
        .flat_map(|g| g.entries().iter().map(move |(n, p)| (format!("{}.{n}", g.name()), p.var().clone())))
        .collect()
}

fn set_entry(var: &Var, index: usize, value: f64) {
    let t = var.as_tensor();
    let mut flat = to_f64_vec(t).unwrap();
    flat[index] = value;
    let next = Tensor::from_vec(flat, t.dims(), t.device()).unwrap().to_dtype(t.dtype()).unwrap();
    var.set(&next).unwrap();
}

/// Result of comparing backpropagated gradients with central differences.
#[derive(Debug)]
pub struct GradReport {
    /// `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖)` over all
    /// probed entries.
    pub rel_err: f64,
    pub probed: usize,
    pub worst: Option<(String, usize, f64, f64)>,
    pub analytic_norm: f64,
}

/// Probes `per_var` random entries of every variable with step `h`.
/// Entries whose analytic gradient is exactly zero are skipped only when the
/// numeric one is too; a missing gradient counts as zero.
pub fn grad_check<F: Fn() -> Tensor>(vars: &[(String, Var)], per_var: usize, h: f64, seed: u64, loss: F) -> GradReport {
    let grads = loss().backward().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    let mut probed = 0;
    let mut worst: Option<(String, usize, f64, f64)> = None;
    let mut worst_gap = -1.0;
    for (name, var) in vars {
        let count = var.as_tensor().elem_count();
        let analytic = grads.get(var).map(|g| to_f64_vec(g).unwrap()).unwrap_or_else(|| vec![0.0; count]);
        let values = to_f64_vec(var.as_tensor()).unwrap();
        for _ in 0..per_var.min(count) {
            let i = rng.random_range(0..count);
            set_entry(var, i, values[i] + h);
            let up = scalar(&loss()).unwrap();
            set_entry(var, i, values[i] - h);
            let down = scalar(&loss()).unwrap();
            set_entry(var, i, values[i]);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            probed += 1;
            let gap = (a - numeric).abs();
            if gap > worst_gap {
                worst_gap = gap;
                worst = Some((name.clone(), i, a, numeric));
            }
        }
    }
    let denom = a2.sqrt().max(n2.sqrt()).max(1e-300);
    GradReport { rel_err: diff2.sqrt() / denom, probed, worst, analytic_norm: a2.sqrt() }
}

/// Fixed random weights `(shape)` for contracting an output to a scalar.
pub fn probe_weights(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    randn(&mut rng, shape, candle_core::DType::F64, &candle_core::Device::Cpu).unwrap()
}
