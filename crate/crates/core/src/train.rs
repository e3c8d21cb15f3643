//! Staged training: autoencoder and backbone pretraining, then the
//! reconstruction/compression warmup, interval and joint stages, and the
//! layout ControlNets.

use std::fmt;
use std::str::FromStr;

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenegen_geometry::Pose;
use scenegen_scene::ClipRecord;
use serde::{Deserialize, Serialize};

use crate::diffusion::{depth_loss, diffusion_loss, latent_loss, total_loss, LossBreakdown, LossParts, LossWeights};
use crate::error::{invalid, shape_err, Result};
use crate::latent::{group_last_frames, latent_frame_count, LATENT_STRIDE};
use crate::model::{CondView, SceneModel};
use crate::nn::{lr_at, randn, scalar, to_f64_vec, Optimizer, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    LrmCcnWarmup,
    LrmCcnIntervals,
    Joint,
    Layout,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::LrmCcnWarmup, Stage::LrmCcnIntervals, Stage::Joint, Stage::Layout];

    pub fn name(self) -> &'static str {
        match self {
            Stage::LrmCcnWarmup => "lrm_ccn_warmup",
            Stage::LrmCcnIntervals => "lrm_ccn_intervals",
            Stage::Joint => "joint",
            Stage::Layout => "layout",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = crate::CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| invalid(format!("unknown stage {s:?}; expected one of lrm_ccn_warmup, lrm_ccn_intervals, joint, layout")))
    }
}

/// Parameter groups updated in `stage`; everything else is frozen.
pub fn stage_groups<'a>(model: &'a SceneModel, stage: Stage) -> Vec<&'a ParamGroup> {
    let fix_lrm = model.ablations.fix_lrm;
    let mut out = Vec::new();
    match stage {
        Stage::LrmCcnWarmup | Stage::LrmCcnIntervals | Stage::Joint => {
            if !fix_lrm {
                out.push(&model.lrm.group);
            }
            out.push(&model.ccn.group);
            if stage == Stage::Joint {
                out.push(&model.scvg.group);
            }
        }
        Stage::Layout => {
            out.push(&model.depth_net.group);
            out.push(&model.semantic_net.group);
        }
    }
    out
}

/// Freezes every group, then unfreezes those trained in `stage`.
pub fn apply_freeze(model: &SceneModel, stage: Stage) {
    model.freeze_all();
    for g in stage_groups(model, stage) {
        g.set_frozen(false);
    }
}

/// One conditioning view of a training sample.
#[derive(Debug, Clone)]
pub struct SampleView {
    pub image: Vec<f32>,
    /// Monocular depth estimate.
    pub mono: Vec<f64>,
    pub gt_depth: Vec<f64>,
    pub pose: Pose,
}

/// One training window.
#[derive(Debug, Clone)]
pub struct Batch {
    pub frames: Vec<Vec<f32>>,
    pub poses: Vec<Pose>,
    pub mono: Vec<Vec<f64>>,
    pub gt_depth: Vec<Vec<f64>>,
    pub semantic: Vec<Vec<u8>>,
    pub spatial: [SampleView; 2],
    /// `(latent index, window frame)` pairs used as temporal conditions.
    pub temporal: Vec<(usize, usize)>,
    /// Encoded frames `(1, N, h, w, 16)`.
    pub z0: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Records with their frames encoded once by the frozen autoencoder.
pub struct TrainData {
    pub records: Vec<ClipRecord>,
    /// Per record `(1, L, h, w, 16)`.
    pub latents: Vec<Tensor>,
}

impl TrainData {
    pub fn new(model: &SceneModel, records: Vec<ClipRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(invalid("no training records"));
        }
        model.ae.group.set_frozen(true);
        let mut latents = Vec::with_capacity(records.len());
        for r in &records {
            let mut parts = Vec::new();
            for chunk in r.frames.chunks(16) {
                let imgs: Vec<&[f32]> = chunk.iter().map(|f| f.image.as_slice()).collect();
                parts.push(model.encode_frames(&imgs)?);
            }
            latents.push(Tensor::cat(&parts, 1)?);
        }
        Ok(Self { records, latents })
    }
}

/// How the conditions of a sampled window are arranged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    /// First frame duplicated as both spatial views; temporal at frame 0.
    Bootstrap,
    /// First and last frame as spatial views; both pinned temporally.
    Interpolation,
    /// Two random nearby frames as spatial views; temporal at frame 0.
    Continuation,
}

/// Window frame indices `start + stride·j` of a record.
pub fn build_batch(
    model: &SceneModel,
    data: &TrainData,
    record: usize,
    frames: &[usize],
    spatial: [usize; 2],
    pin_last: bool,
) -> Result<Batch> {
    let n = frames.len();
    let n_latent = latent_frame_count(n)?;
    let rec = &data.records[record];
    let view = |i: usize| -> Result<SampleView> {
        let f = &rec.frames[i];
        Ok(SampleView {
            image: f.image.clone(),
            mono: rec.mono[i].clone(),
            gt_depth: f.depth.clone().ok_or_else(|| invalid("training frames need depth"))?,
            pose: f.pose,
        })
    };
    let ids = Tensor::from_vec(frames.iter().map(|&i| i as u32).collect::<Vec<_>>(), n, model.device())?;
    let mut temporal = vec![(0, 0)];
    if pin_last && n_latent > 1 {
        temporal.push((n_latent - 1, n - 1));
    }
    Ok(Batch {
        frames: frames.iter().map(|&i| rec.frames[i].image.clone()).collect(),
        poses: frames.iter().map(|&i| rec.frames[i].pose).collect(),
        mono: frames.iter().map(|&i| rec.mono[i].clone()).collect(),
        gt_depth: frames.iter().map(|&i| rec.frames[i].depth.clone().unwrap_or_default()).collect(),
        semantic: frames.iter().map(|&i| rec.frames[i].semantic.clone().unwrap_or_default()).collect(),
        spatial: [view(spatial[0])?, view(spatial[1])?],
        temporal,
        z0: data.latents[record].index_select(&ids, 1)?,
    })
}

/// Draws a random window with frame spacing `stride`.
pub fn sample_batch(model: &SceneModel, data: &TrainData, rng: &mut ChaCha8Rng, stride: usize) -> Result<Batch> {
    let n = model.cfg.window;
    let span = (n - 1) * stride;
    let candidates: Vec<usize> = (0..data.records.len()).filter(|&r| data.records[r].len() > span).collect();
    if candidates.is_empty() {
        return Err(invalid(format!("no record is long enough for a window of {n} frames at stride {stride}")));
    }
    let record = candidates[rng.random_range(0..candidates.len())];
    let len = data.records[record].len();
    let start = rng.random_range(0..len - span);
    let frames: Vec<usize> = (0..n).map(|j| start + j * stride).collect();
    let kind = match rng.random_range(0..4) {
        0 => SampleKind::Bootstrap,
        1 => SampleKind::Interpolation,
        _ => SampleKind::Continuation,
    };
    let (spatial, pin) = match kind {
        SampleKind::Bootstrap => ([start, start], false),
        SampleKind::Interpolation => ([start, start + span], true),
        SampleKind::Continuation => {
            let lo = start.saturating_sub(span / 2);
            let hi = (start + span + span / 2).min(len - 1);
            ([rng.random_range(lo..=hi), rng.random_range(lo..=hi)], false)
        }
    };
    build_batch(model, data, record, &frames, spatial, pin)
}

/// Evenly spaced novel views for the depth loss.
pub fn depth_views(n_frames: usize, count: usize) -> Vec<usize> {
    if count <= 1 || n_frames <= 1 {
        return vec![0];
    }
    let count = count.min(n_frames);
    (0..count).map(|i| ((i * (n_frames - 1)) as f64 / (count - 1) as f64).round() as usize).collect()
}

/// `s × s` average pooling of a square map.
pub fn pool_map(map: &[f64], size: usize, s: usize) -> Vec<f64> {
    let out = size / s;
    let mut res = vec![0.0; out * out];
    for v in 0..size {
        for u in 0..size {
            res[(v / s) * out + u / s] += map[v * size + u];
        }
    }
    res.iter().map(|x| x / (s * s) as f64).collect()
}

/// Forward pass of one stage on one batch with fixed timestep and noise.
pub fn stage_loss(
    model: &SceneModel,
    batch: &Batch,
    stage: Stage,
    t: usize,
    eps: &Tensor,
    weights: &LossWeights,
) -> Result<(Tensor, LossBreakdown)> {
    let n = batch.len();
    latent_frame_count(n)?;
    if batch.poses.len() != n || batch.z0.dim(1)? != n {
        return Err(shape_err("batch", n, (batch.poses.len(), batch.z0.dim(1)?)));
    }
    let dev = model.device().clone();
    if stage == Stage::Layout {
        let depths: Vec<&[f64]> = batch.gt_depth.iter().map(Vec::as_slice).collect();
        let sems: Vec<&[u8]> = batch.semantic.iter().map(Vec::as_slice).collect();
        let (dc, sc) = model.layout_conditions(&depths, &sems)?;
        let z_t = model.schedule.q_sample(&batch.z0, &[t], eps)?;
        let tf = [t as f64];
        let r_sem = model.semantic_net.forward(&z_t, &tf, &sc)?;
        let r_dep = model.depth_net.forward(&z_t, &tf, &dc)?;
        let res = crate::diffusion::combine_controls(&[0.5, 0.5], &[r_sem, r_dep])?;
        let eps_hat = model.backbone.forward(&z_t, &tf, &res)?;
        let parts = LossParts { diffusion: Some(diffusion_loss(&eps_hat, eps)?), ..Default::default() };
        return total_loss(&parts, weights, &dev);
    }

    let views = [0, 1].map(|i| {
        let v = &batch.spatial[i];
        CondView { image: &v.image, depth: &v.mono, gt_depth: Some(&v.gt_depth), pose: v.pose }
    });
    let spatial = model.spatial_render(views, &batch.poses)?;
    let lcam = model.latent_camera();
    let hw = lcam.num_pixels();
    let mut parts = LossParts::default();

    if !model.ablations.no_depth_loss {
        let sel = depth_views(n, model.cfg.novel_views);
        let ids = Tensor::from_vec(sel.iter().map(|&i| i as u32).collect::<Vec<_>>(), sel.len(), &dev)?;
        let rendered = spatial.depths.index_select(&ids, 0)?;
        let mut mono = Vec::with_capacity(sel.len() * hw);
        let mut visible = Vec::with_capacity(sel.len());
        for &i in &sel {
            mono.extend(pool_map(&batch.mono[i], model.cfg.image_size, LATENT_STRIDE));
            visible.push(spatial.visible[i * hw..(i + 1) * hw].to_vec());
        }
        let mono = Tensor::from_vec(mono, rendered.dims(), &dev)?.to_dtype(rendered.dtype())?;
        // invisible pixels hold depth 0; keep them finite for the reciprocal
        let vis_t = spatial.visibility.squeeze(0)?.index_select(&ids, 0)?;
        let safe = (rendered.clone() + (1.0 - &vis_t)?)?;
        parts.depth = Some(depth_loss(&safe, &mono, &visible)?);
    }

    let last = group_last_frames(n)?;
    let last_ids = Tensor::from_vec(last.iter().map(|&i| i as u32).collect::<Vec<_>>(), last.len(), &dev)?;
    let target = batch.z0.index_select(&last_ids, 1)?;
    let mask = spatial.visibility.index_select(&last_ids, 1)?;
    parts.latent = Some(latent_loss(&spatial.z_spat.data, &target, &mask)?);

    if stage == Stage::Joint {
        let temporal: Vec<(usize, &[f32])> =
            batch.temporal.iter().map(|&(li, fi)| (li, batch.frames[fi].as_slice())).collect();
        let cond = model.spatiotemporal(&spatial, &temporal)?;
        let cond = cond.z_st.broadcast_to_frames()?;
        let z_t = model.schedule.q_sample(&batch.z0, &[t], eps)?;
        let tf = [t as f64];
        let res = model.scvg.forward(&z_t, &tf, &cond)?;
        let eps_hat = model.backbone.forward(&z_t, &tf, &res)?;
        parts.diffusion = Some(diffusion_loss(&eps_hat, eps)?);
    }
    total_loss(&parts, weights, &dev)
}

/// Step-indexed loss log entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub grad_norm: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Trains `stage` for `steps` steps with AdamW, warmup and cosine decay.
pub fn run_stage(model: &mut SceneModel, data: &TrainData, stage: Stage, steps: usize, seed: u64) -> Result<Vec<LogEntry>> {
    apply_freeze(model, stage);
    let vars: Vec<_> = stage_groups(model, stage).iter().flat_map(|g| g.vars()).collect();
    if vars.is_empty() {
        return Err(invalid(format!("stage {stage} has nothing to train")));
    }
    let cfg = model.cfg.clone();
    let mut opt = Optimizer::new(vars, cfg.stage_lr, cfg.weight_decay, Some(cfg.grad_clip))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5747_4745);
    let stride = if stage == Stage::LrmCcnIntervals { cfg.interval_stride.max(1) } else { 1 };
    let weights = cfg.loss_weights();
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = sample_batch(model, data, &mut rng, stride)?;
        let t = rng.random_range(0..model.schedule.len());
        let eps = randn(&mut rng, batch.z0.dims(), model.dtype(), model.device())?;
        let (loss, breakdown) = stage_loss(model, &batch, stage, t, &eps, &weights)?;
        let lr = lr_at(step, steps, cfg.stage_lr, cfg.lr_warmup, cfg.lr_floor);
        opt.set_lr(lr);
        let grad_norm = opt.step(&loss)?;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == steps) {
            log::info!(
                "{stage} step {step}: total {:.4} depth {:.4} latent {:.4} diffusion {:.2} |g| {:.3}",
                breakdown.total,
                breakdown.depth,
                breakdown.latent,
                breakdown.diffusion,
                grad_norm
            );
        }
        log.push(LogEntry { step, lr, grad_norm, loss: breakdown });
    }
    model.freeze_all();
    model.stage = stage.name().to_string();
    Ok(log)
}

/// Reconstruction pretraining of the autoencoder on individual frames,
/// followed by estimation of the per-channel latent statistics.
pub fn pretrain_ae(model: &mut SceneModel, records: &[ClipRecord], steps: usize, seed: u64) -> Result<Vec<LogEntry>> {
    let frames: Vec<&[f32]> = records.iter().flat_map(|r| r.frames.iter().map(|f| f.image.as_slice())).collect();
    if frames.is_empty() {
        return Err(invalid("no frames to train on"));
    }
    model.freeze_all();
    model.ae.group.set_frozen(false);
    let cfg = model.cfg.clone();
    let mut opt = Optimizer::new(model.ae.trainable_vars(), cfg.ae_lr, cfg.weight_decay, Some(cfg.grad_clip))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xae);
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch: Vec<&[f32]> = (0..cfg.ae_batch).map(|_| frames[rng.random_range(0..frames.len())]).collect();
        let x = model.image_batch(&batch)?;
        let recon = model.ae.decode_raw(&model.ae.encode_raw(&x)?)?;
        let loss = (recon - &x)?.sqr()?.mean_all()?;
        let lr = lr_at(step, steps, cfg.ae_lr, cfg.lr_warmup, cfg.lr_floor);
        opt.set_lr(lr);
        let value = scalar(&loss)?;
        let grad_norm = opt.step(&loss)?;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == steps) {
            log::info!("ae step {step}: mse {value:.5} |g| {grad_norm:.3}");
        }
        log.push(LogEntry {
            step,
            lr,
            grad_norm,
            loss: LossBreakdown { total: value, ..Default::default() },
        });
    }
    model.ae.group.set_frozen(true);
    update_latent_stats(model, &frames)?;
    model.stage = "pretrain_ae".into();
    Ok(log)
}

/// Per-channel mean and standard deviation of raw latents over `frames`.
pub fn update_latent_stats(model: &SceneModel, frames: &[&[f32]]) -> Result<()> {
    let c = crate::latent::LATENT_CHANNELS;
    let mut sum = vec![0.0; c];
    let mut sq = vec![0.0; c];
    let mut count = 0usize;
    for chunk in frames.chunks(16) {
        let z = model.ae.encode_raw(&model.image_batch(chunk)?)?.detach();
        let flat = to_f64_vec(&z)?;
        for cell in flat.chunks(c) {
            for (k, v) in cell.iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
            count += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let std: Vec<f64> =
        sq.iter().zip(&mean).map(|(s, m)| (s / count as f64 - m * m).max(1e-8).sqrt()).collect();
    model.ae.set_latent_stats(&mean, &std)
}

/// Unconditional noise-prediction pretraining of the backbone on encoded
/// windows; the ControlNets are re-copied from the result.
pub fn pretrain_backbone(model: &mut SceneModel, data: &TrainData, steps: usize, seed: u64) -> Result<Vec<LogEntry>> {
    model.freeze_all();
    model.backbone.group.set_frozen(false);
    let cfg = model.cfg.clone();
    let mut opt = Optimizer::new(model.backbone.group.vars(), cfg.backbone_lr, cfg.weight_decay, Some(cfg.grad_clip))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbb);
    let n = cfg.window;
    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut z0 = Vec::with_capacity(cfg.backbone_batch);
        for _ in 0..cfg.backbone_batch {
            let r = rng.random_range(0..data.records.len());
            let len = data.latents[r].dim(1)?;
            if len < n {
                return Err(invalid(format!("record {r} is shorter than a window")));
            }
            let start = rng.random_range(0..=len - n);
            z0.push(data.latents[r].narrow(1, start, n)?);
        }
        let z0 = Tensor::cat(&z0, 0)?;
        let t: Vec<usize> = (0..cfg.backbone_batch).map(|_| rng.random_range(0..model.schedule.len())).collect();
        let eps = randn(&mut rng, z0.dims(), model.dtype(), model.device())?;
        let z_t = model.schedule.q_sample(&z0, &t, &eps)?;
        let tf: Vec<f64> = t.iter().map(|&v| v as f64).collect();
        let eps_hat = model.backbone.forward(&z_t, &tf, &[])?;
        let loss = diffusion_loss(&eps_hat, &eps)?;
        let lr = lr_at(step, steps, cfg.backbone_lr, cfg.lr_warmup, cfg.lr_floor);
        opt.set_lr(lr);
        let value = scalar(&loss)?;
        let grad_norm = opt.step(&loss)?;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == steps) {
            log::info!("backbone step {step}: loss {value:.2} |g| {grad_norm:.3}");
        }
        log.push(LogEntry {
            step,
            lr,
            grad_norm,
            loss: LossBreakdown { diffusion: value, total: value, ..Default::default() },
        });
    }
    model.backbone.group.set_frozen(true);
    model.copy_backbone_into_controlnets()?;
    model.stage = "pretrain_backbone".into();
    Ok(log)
}
