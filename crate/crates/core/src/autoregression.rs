//! Sliding-window generation over long trajectories: window planning, the
//! scene bank, spatial-condition selection, and the three task pipelines.

use scenegen_geometry::{frustum_overlap_score, DepthView, Pose};
use serde::{Deserialize, Serialize};

use crate::diffusion::{sample_latents, ControlInput, ControlNet};
use crate::error::{invalid, shape_err, Result};
use crate::latent::{latent_frame_count, TemporalInsertion, LATENT_STRIDE};
use crate::model::{CondView, SceneModel};
use crate::nn::to_f64_vec;

/// Clip of the trajectory covered by one window, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    /// Trajectory frame carried over from the previous window.
    pub temporal_source: Option<usize>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frames(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_len: usize,
    pub windows: Vec<Window>,
}

/// Windows of `n` frames overlapping by exactly one frame.
pub fn plan_windows(trajectory_len: usize, n: usize) -> Result<WindowPlan> {
    latent_frame_count(n)?;
    if n < 5 {
        return Err(invalid(format!("window length {n} cannot advance with a one-frame overlap")));
    }
    if trajectory_len < n {
        return Err(invalid(format!("trajectory of {trajectory_len} frames is shorter than one window of {n}")));
    }
    let step = n - 1;
    if (trajectory_len - 1) % step != 0 {
        let below = (trajectory_len - 1) / step * step + 1;
        let above = below + step;
        return Err(invalid(format!(
            "trajectory length {trajectory_len} does not tile windows of {n}; nearest valid lengths are {below} and {above}"
        )));
    }
    let windows = (0..(trajectory_len - 1) / step)
        .map(|k| Window {
            start: k * step,
            end: k * step + step,
            temporal_source: (k > 0).then_some(k * step),
        })
        .collect();
    Ok(WindowPlan { window_len: n, windows })
}

/// A generated (or given) posed frame kept as a spatial-condition candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    /// Insertion order, unique within a bank.
    pub id: usize,
    /// Trajectory frame the entry was taken from.
    pub frame: usize,
    pub image: Vec<f32>,
    /// Full-resolution z-depth.
    pub depth: Vec<f64>,
    pub pose: Pose,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneBank {
    pub entries: Vec<BankEntry>,
}

impl SceneBank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, frame: usize, image: Vec<f32>, depth: Vec<f64>, pose: Pose) -> usize {
        let id = self.entries.iter().map(|e| e.id + 1).max().unwrap_or(0);
        self.entries.push(BankEntry { id, frame, image, depth, pose });
        id
    }

    pub fn get(&self, id: usize) -> Option<&BankEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// The chosen pair with their overlap scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub ids: [usize; 2],
    pub scores: [f64; 2],
}

/// Ranks bank entries by mean frustum overlap with the window poses and
/// returns the top two; ties go to the more recent entry. A single entry is
/// returned twice.
pub fn select_spatial_conditions(
    bank: &SceneBank,
    window_poses: &[Pose],
    camera: &scenegen_geometry::CameraModel,
) -> Result<Selection> {
    if bank.is_empty() {
        return Err(invalid("spatial selection from an empty bank"));
    }
    let mut scored: Vec<(f64, usize)> = bank
        .entries
        .iter()
        .map(|e| {
            let view = DepthView { camera, pose: &e.pose, depth: &e.depth };
            (frustum_overlap_score(view, window_poses, camera), e.id)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
    let first = scored[0];
    let second = scored.get(1).copied().unwrap_or(first);
    Ok(Selection { ids: [first.1, second.1], scores: [first.0, second.0] })
}

/// Clip positions added to the bank after each window.
pub fn bank_sample_indices(n: usize) -> [usize; 2] {
    [(n - 1) / 3, 2 * (n - 1) / 3]
}

/// Appends the frames at the thirds of a generated window.
pub fn update_bank(bank: &mut SceneBank, window: &Window, output: &WindowOutput) -> Result<[usize; 2]> {
    let n = output.frames.len();
    if n != window.len() || output.depths.len() != n || output.poses.len() != n {
        return Err(shape_err("window output", window.len(), (n, output.depths.len(), output.poses.len())));
    }
    Ok(bank_sample_indices(n).map(|i| {
        bank.push(window.start + i, output.frames[i].clone(), output.depths[i].clone(), output.poses[i])
    }))
}

/// Generated frames of one window with the depths rendered for them.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutput {
    pub frames: Vec<Vec<f32>>,
    /// Full-resolution z-depth per frame.
    pub depths: Vec<Vec<f64>>,
    pub poses: Vec<Pose>,
    /// Fraction of latent pixels covered by the splatted cloud, per frame.
    pub coverage: Vec<f64>,
}

/// Bilinear upsampling of a `w × h` map by an integer factor with
/// pixel-center alignment and edge clamping.
pub fn upsample_bilinear(map: &[f64], w: usize, h: usize, factor: usize) -> Vec<f64> {
    let (ow, oh) = (w * factor, h * factor);
    let mut out = Vec::with_capacity(ow * oh);
    let at = |x: usize, y: usize| map[y * w + x];
    for y in 0..oh {
        let fy = ((y as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
        let y1 = (y0 + 1).min(h - 1);
        for x in 0..ow {
            let fx = ((x as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
            let x1 = (x0 + 1).min(w - 1);
            let top = at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx;
            let bottom = at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Extra ControlNets mixed into the scene-conditioned one.
pub struct ExtraControl<'a> {
    pub net: &'a ControlNet,
    /// Condition over the window's original frames, `(1, N, h, w, c)`.
    pub cond: candle_core::Tensor,
    pub weight: f64,
}

/// Conditions of one window.
pub struct WindowRequest<'a> {
    pub spatial: [CondView<'a>; 2],
    /// Temporal condition image and its frame index `k` in the window.
    pub temporal: Option<(usize, &'a [f32])>,
    /// Image pinned at the final latent frame.
    pub pin_last: Option<&'a [f32]>,
    pub poses: &'a [Pose],
    pub scvg_weight: f64,
    pub extra: Vec<ExtraControl<'a>>,
    pub seed: u64,
}

/// Clamp on the implied clean latent during sampling.
const X0_CLIP: Option<f64> = None;

/// Reconstruct, render, compress, replace, sample and decode one window.
pub fn generate_window(model: &SceneModel, req: &WindowRequest<'_>) -> Result<WindowOutput> {
    let n = req.poses.len();
    latent_frame_count(n)?;
    let k = req.temporal.map_or(0, |(k, _)| k);
    let plan = TemporalInsertion::plan(n, k)?;
    let ext_poses = plan.apply(req.poses);
    let ext_n = ext_poses.len();
    let n_latent = latent_frame_count(ext_n)?;
    if req.pin_last.is_some() && plan.positions[n - 1] != ext_n - 1 {
        return Err(invalid("pinning the last frame needs it to end the extended window"));
    }

    let spatial = model.spatial_render(req.spatial, &ext_poses)?;
    let mut temporal: Vec<(usize, &[f32])> = Vec::new();
    if let Some((_, img)) = req.temporal {
        temporal.push((plan.latent_index, img));
    }
    if let Some(img) = req.pin_last {
        temporal.push((n_latent - 1, img));
    }
    let cond = model.spatiotemporal(&spatial, &temporal)?.z_st.broadcast_to_frames()?;

    let src_ids: Vec<u32> = plan.sources.iter().map(|&s| s as u32).collect();
    let src_ids = candle_core::Tensor::from_vec(src_ids, ext_n, model.device())?;
    let mut controls = vec![ControlInput { net: &model.scvg, cond, weight: req.scvg_weight }];
    for e in &req.extra {
        controls.push(ControlInput { net: e.net, cond: e.cond.index_select(&src_ids, 1)?, weight: e.weight });
    }
    controls.retain(|c| c.weight > 0.0);

    let lcam = model.latent_camera();
    let shape = [1, ext_n, lcam.height, lcam.width, crate::latent::LATENT_CHANNELS];
    let z = sample_latents(&model.backbone, &model.schedule, &controls, &shape, model.cfg.sample_steps, req.seed, X0_CLIP)?;
    let frames_ext = model.decode_frames(&z)?;

    let hw = lcam.num_pixels();
    let depth_ext = to_f64_vec(&spatial.depths)?;
    let mut out = WindowOutput { frames: Vec::new(), depths: Vec::new(), poses: req.poses.to_vec(), coverage: Vec::new() };
    for &pos in &plan.positions {
        out.frames.push(frames_ext[pos].clone());
        let d = &depth_ext[pos * hw..(pos + 1) * hw];
        let vis = &spatial.visible[pos * hw..(pos + 1) * hw];
        let seen: Vec<f64> = d.iter().zip(vis).filter(|(_, v)| **v).map(|(d, _)| *d).collect();
        let fill = if seen.is_empty() { model.cfg.far } else { seen.iter().sum::<f64>() / seen.len() as f64 };
        let filled: Vec<f64> = d.iter().zip(vis).map(|(d, v)| if *v { *d } else { fill }).collect();
        out.depths.push(upsample_bilinear(&filled, lcam.width, lcam.height, LATENT_STRIDE));
        out.coverage.push(seen.len() as f64 / hw as f64);
    }
    Ok(out)
}

/// Condition metadata recorded per window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLog {
    pub window: Window,
    pub selection: Option<Selection>,
    /// Trajectory frames the selected bank entries came from.
    pub selected_frames: Option<[usize; 2]>,
    /// Whether a selected entry is the temporal condition frame itself.
    pub temporal_frame_selected: bool,
    pub bank_size_before: usize,
    pub bank_added: Vec<usize>,
    pub seed: u64,
}

/// Result of a multi-window task.
#[derive(Debug, Clone)]
pub struct TaskRun {
    pub frames: Vec<Vec<f32>>,
    pub depths: Vec<Vec<f64>>,
    pub windows: Vec<WindowLog>,
    pub bank: SceneBank,
}

/// Seed of window `k` in a run seeded with `seed`.
pub fn window_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k as u64)
}

/// Input image of a task with its depth estimate.
#[derive(Debug, Clone, Copy)]
pub struct InputFrame<'a> {
    pub image: &'a [f32],
    /// Monocular depth estimate (any scale).
    pub depth: &'a [f64],
    /// Metric depth, only read by the ground-truth cloud ablation.
    pub gt_depth: Option<&'a [f64]>,
    pub pose: Pose,
}

impl<'a> InputFrame<'a> {
    fn view(&self) -> CondView<'a> {
        CondView { image: self.image, depth: self.depth, gt_depth: self.gt_depth, pose: self.pose }
    }
}

fn entry_view(e: &BankEntry) -> CondView<'_> {
    CondView { image: &e.image, depth: &e.depth, gt_depth: Some(&e.depth), pose: e.pose }
}

/// Rescales a depth map so its mean equals `target_mean`.
pub fn rescale_to_mean(depth: &[f64], target_mean: f64) -> Result<Vec<f64>> {
    let mean = depth.iter().sum::<f64>() / depth.len().max(1) as f64;
    if !(mean > 0.0 && target_mean > 0.0) {
        return Err(invalid(format!("cannot rescale depth of mean {mean} to {target_mean}")));
    }
    Ok(depth.iter().map(|d| d * target_mean / mean).collect())
}

/// Drives windows over `poses`, conditioning the first on `first_window`
/// and later ones on bank selections chained through the shared frame.
fn run_windows<'a, F>(
    model: &SceneModel,
    poses: &[Pose],
    mut bank: SceneBank,
    seed: u64,
    mut first_window: F,
    layout: Option<&LayoutControls<'a>>,
) -> Result<TaskRun>
where
    F: FnMut(&SceneModel, &[Pose], u64) -> Result<WindowOutput>,
{
    let plan = plan_windows(poses.len(), model.cfg.window)?;
    let cam = model.camera();
    let mut frames: Vec<Vec<f32>> = Vec::with_capacity(poses.len());
    let mut depths: Vec<Vec<f64>> = Vec::with_capacity(poses.len());
    let mut logs = Vec::with_capacity(plan.windows.len());
    for (k, w) in plan.windows.iter().enumerate() {
        let wposes = &poses[w.frames()];
        let wseed = window_seed(seed, k);
        let before = bank.len();
        let (out, selection) = if k == 0 {
            (first_window(model, wposes, wseed)?, None)
        } else {
            let sel = select_spatial_conditions(&bank, wposes, &cam)?;
            let (a, b) = (bank.get(sel.ids[0]).unwrap(), bank.get(sel.ids[1]).unwrap());
            let temporal_img = frames[w.start].clone();
            let mut extra = Vec::new();
            let mut scvg_weight = 1.0;
            if let Some(l) = layout {
                let (dc, sc) = l.conditions(model, w)?;
                extra.push(ExtraControl { net: &model.semantic_net, cond: sc, weight: 0.3 });
                extra.push(ExtraControl { net: &model.depth_net, cond: dc, weight: 0.3 });
                scvg_weight = 0.4;
            }
            let req = WindowRequest {
                spatial: [entry_view(a), entry_view(b)],
                temporal: Some((0, &temporal_img)),
                pin_last: None,
                poses: wposes,
                scvg_weight,
                extra,
                seed: wseed,
            };
            (generate_window(model, &req)?, Some(sel))
        };
        // the shared first frame was produced by the previous window
        let skip = usize::from(k > 0);
        frames.extend(out.frames.iter().skip(skip).cloned());
        depths.extend(out.depths.iter().skip(skip).cloned());
        let mut out = out;
        if let Some(l) = layout {
            for (i, f) in w.frames().enumerate() {
                out.depths[i] = l.depths[f].to_vec();
            }
        }
        let added = update_bank(&mut bank, w, &out)?;
        let selected_frames = selection.map(|s| s.ids.map(|id| bank.get(id).map_or(usize::MAX, |e| e.frame)));
        let temporal_frame_selected = matches!((selected_frames, w.temporal_source), (Some(f), Some(t)) if f.contains(&t));
        if temporal_frame_selected {
            log::info!("window {k}: the temporal frame {} was also selected as a spatial condition", w.start);
        }
        logs.push(WindowLog {
            window: *w,
            selection,
            selected_frames,
            temporal_frame_selected,
            bank_size_before: before,
            bank_added: added.to_vec(),
            seed: wseed,
        });
    }
    Ok(TaskRun { frames, depths, windows: logs, bank })
}

/// Perpetual generation from one image along `poses`. The input's depth
/// estimate is rescaled to `reference_mean_depth` when given.
pub fn run_perpetual(
    model: &SceneModel,
    first: InputFrame<'_>,
    poses: &[Pose],
    reference_mean_depth: Option<f64>,
    seed: u64,
) -> Result<TaskRun> {
    if poses.first() != Some(&first.pose) {
        return Err(invalid("the trajectory must start at the input pose"));
    }
    let depth = match reference_mean_depth {
        Some(m) => rescale_to_mean(first.depth, m)?,
        None => first.depth.to_vec(),
    };
    let mut bank = SceneBank::default();
    bank.push(0, first.image.to_vec(), depth.clone(), first.pose);
    let input = InputFrame { depth: &depth, ..first };
    run_windows(
        model,
        poses,
        bank,
        seed,
        |m, wposes, wseed| {
            let req = WindowRequest {
                spatial: [input.view(), input.view()],
                temporal: Some((0, input.image)),
                pin_last: None,
                poses: wposes,
                scvg_weight: 1.0,
                extra: Vec::new(),
                seed: wseed,
            };
            generate_window(m, &req)
        },
        None,
    )
}

/// Full-resolution layout maps for every trajectory frame.
pub struct LayoutControls<'a> {
    pub depths: Vec<&'a [f64]>,
    pub semantics: Vec<&'a [u8]>,
}

impl LayoutControls<'_> {
    fn conditions(&self, model: &SceneModel, w: &Window) -> Result<(candle_core::Tensor, candle_core::Tensor)> {
        model.layout_conditions(&self.depths[w.frames()], &self.semantics[w.frames()])
    }
}

/// Layout-to-video: the first window mixes the semantic and depth
/// ControlNets; later windows add the scene-conditioned one. Bank entries
/// take their depth from the layout.
pub fn run_layout(model: &SceneModel, layout: &LayoutControls<'_>, poses: &[Pose], seed: u64) -> Result<TaskRun> {
    if layout.depths.len() != poses.len() || layout.semantics.len() != poses.len() {
        return Err(shape_err("layout maps", poses.len(), (layout.depths.len(), layout.semantics.len())));
    }
    run_windows(
        model,
        poses,
        SceneBank::default(),
        seed,
        |m, wposes, wseed| {
            let w = Window { start: 0, end: wposes.len() - 1, temporal_source: None };
            let (dc, sc) = layout.conditions(m, &w)?;
            let controls = [
                ControlInput { net: &m.semantic_net, cond: sc, weight: 0.5 },
                ControlInput { net: &m.depth_net, cond: dc, weight: 0.5 },
            ];
            let lcam = m.latent_camera();
            let shape = [1, wposes.len(), lcam.height, lcam.width, crate::latent::LATENT_CHANNELS];
            let z = sample_latents(&m.backbone, &m.schedule, &controls, &shape, m.cfg.sample_steps, wseed, X0_CLIP)?;
            let frames = m.decode_frames(&z)?;
            Ok(WindowOutput {
                depths: layout.depths[w.frames()].iter().map(|d| d.to_vec()).collect(),
                frames,
                poses: wposes.to_vec(),
                coverage: vec![0.0; wposes.len()],
            })
        },
        Some(layout),
    )
}

/// Output of sparse-view interpolation.
#[derive(Debug, Clone)]
pub struct InterpolationRun {
    pub frames: Vec<Vec<f32>>,
    /// Intermediate clip of the two-pass variant.
    pub coarse: Option<Vec<Vec<f32>>>,
}

/// Frames between two posed inputs. Single pass uses both inputs as the
/// spatial pair, the first as temporal condition and the last pinned at the
/// final latent frame. With `two_pass = Some(m)`, a coarse clip over every
/// `m`-th pose provides `m + 1` anchors and each adjacent anchor pair is
/// interpolated at full rate; shared endpoints appear once.
pub fn run_sparse_interpolation(
    model: &SceneModel,
    first: InputFrame<'_>,
    last: InputFrame<'_>,
    poses: &[Pose],
    two_pass: Option<usize>,
    seed: u64,
) -> Result<InterpolationRun> {
    let single = |a: InputFrame<'_>, b: InputFrame<'_>, p: &[Pose], s: u64| -> Result<WindowOutput> {
        let req = WindowRequest {
            spatial: [a.view(), b.view()],
            temporal: Some((0, a.image)),
            pin_last: Some(b.image),
            poses: p,
            scvg_weight: 1.0,
            extra: Vec::new(),
            seed: s,
        };
        generate_window(model, &req)
    };
    let Some(m) = two_pass else {
        latent_frame_count(poses.len())?;
        return Ok(InterpolationRun { frames: single(first, last, poses, seed)?.frames, coarse: None });
    };
    if m == 0 {
        return Err(invalid("two-pass interpolation needs m ≥ 1"));
    }
    // total = m·(L − 1) + 1 with L ≡ 1 (mod 4) and m dividing L − 1
    let total = poses.len();
    if total < 2 || (total - 1) % m != 0 {
        return Err(invalid(format!("{total} poses cannot be split into {m} clips")));
    }
    let l = (total - 1) / m + 1;
    latent_frame_count(l)?;
    if (l - 1) % m != 0 {
        return Err(invalid(format!("clip length {l} leaves anchors off the coarse grid for m = {m}")));
    }
    let coarse_poses: Vec<Pose> = (0..l).map(|i| poses[i * m]).collect();
    let coarse = single(first, last, &coarse_poses, window_seed(seed, 0))?;
    let step = (l - 1) / m;
    let mut frames = Vec::with_capacity(total);
    for j in 0..m {
        let (ia, ib) = (j * step, (j + 1) * step);
        let anchor = |i: usize| InputFrame {
            image: &coarse.frames[i],
            depth: &coarse.depths[i],
            gt_depth: None,
            pose: coarse.poses[i],
        };
        let a = if j == 0 { first } else { anchor(ia) };
        let b = if j + 1 == m { last } else { anchor(ib) };
        let fine = single(a, b, &poses[j * (l - 1)..=(j + 1) * (l - 1)], window_seed(seed, j + 1))?;
        frames.extend(fine.frames.into_iter().skip(usize::from(j > 0)));
    }
    Ok(InterpolationRun { frames, coarse: Some(coarse.frames) })
}
