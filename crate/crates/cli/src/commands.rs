use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use scenegen_core::autoregression::{
    run_layout, run_perpetual, run_sparse_interpolation, InputFrame, LayoutControls, WindowLog,
};
use scenegen_core::checkpoint::Checkpoint;
use scenegen_core::config::RunConfig;
use scenegen_core::metrics::{
    align_trajectory, frechet_distance, keyframe_indices, photometric_report, pose_metrics, OracleEstimator,
    PhotometricReport,
};
use scenegen_core::model::{Ablations, SceneModel};
use scenegen_core::train::{self, LogEntry, Stage, TrainData};
use scenegen_geometry::{CameraModel, Pose};
use scenegen_scene::{
    generate_dataset, read_dataset, write_dataset, ClipRecord, DatasetParams, TrajectoryKind, TrajectoryParams,
};
use serde::Serialize;
use serde_json::json;

use crate::io::{read_frames, read_poses, write_json, write_video};
use crate::manifest::Manifest;
use crate::{AblationArgs, Cli, Command, DataArgs, EvalArgs, GenerateArgs, StageArg, StageArgs, Task, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SynthData => synth_data(cli),
        Command::PretrainAe(args) => pretrain_ae(cli, args),
        Command::PretrainBackbone(args) => pretrain_backbone(cli, args),
        Command::Train(args) => train_stage(cli, args),
        Command::Generate(args) => generate(cli, args),
        Command::Eval(args) => eval(cli, args),
        Command::InspectCheckpoint { path } => inspect(path),
    }
}

/// Configuration from `base` (or defaults), then `--config`, then `--set`.
fn effective_config(cli: &Cli, base: Option<RunConfig>) -> Result<RunConfig> {
    let mut cfg = base.unwrap_or_default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        cfg.apply(&text).with_context(|| format!("in {}", path.display()))?;
    }
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().context("this command needs --out DIR")?;
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn dataset_params(cfg: &RunConfig, seed: u64) -> Result<DatasetParams> {
    let kinds = cfg
        .data_kinds
        .split(',')
        .map(|k| TrajectoryKind::from_str(k.trim()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(DatasetParams {
        seed,
        scenes: cfg.data_scenes,
        records_per_scene: cfg.data_records,
        record_length: cfg.data_record_length,
        kinds,
        trajectory: trajectory_params(cfg)?,
        ..Default::default()
    })
}

/// Camera paths rendered at the model's resolution.
fn trajectory_params(cfg: &RunConfig) -> Result<TrajectoryParams> {
    Ok(TrajectoryParams { camera: CameraModel::with_fov(cfg.image_size, 60.0)?, ..Default::default() })
}

fn synth_data(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let cfg = effective_config(cli, None)?;
    let out = out_dir(cli)?;
    let params = dataset_params(&cfg, cli.seed)?;
    let records = generate_dataset(&params)?;
    let written = write_dataset(&out, &params, &records)?;
    let mut m = Manifest::new("synth-data", cli.seed, cfg.to_text());
    m.outputs.insert("dataset".into(), out.join("dataset.json").display().to_string());
    m.summary = json!({
        "records": written.records.len(),
        "frames": records.iter().map(ClipRecord::len).sum::<usize>(),
    });
    m.elapsed_seconds = started.elapsed().as_secs_f64();
    m.write(&out)
}

fn load_records(path: &Path, cfg: &RunConfig) -> Result<Vec<ClipRecord>> {
    let (_, records) = read_dataset(path).with_context(|| format!("cannot read dataset {}", path.display()))?;
    for r in &records {
        let cam = r.camera();
        ensure!(
            cam.width == cfg.image_size && cam.height == cfg.image_size,
            "record {} is {}×{}, the model expects {}×{}",
            r.name,
            cam.width,
            cam.height,
            cfg.image_size,
            cfg.image_size
        );
    }
    Ok(records)
}

/// Loads a checkpoint, layering the CLI configuration over its own.
fn load_model(cli: &Cli, path: &Path) -> Result<(SceneModel, String)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("cannot load {}", path.display()))?;
    let hash = ckpt.content_hash()?;
    let mut model = SceneModel::from_checkpoint(&ckpt)?;
    let cfg = effective_config(cli, Some(model.cfg.clone()))?;
    ensure!(cfg.same_architecture(&model.cfg), "the configuration changes the architecture of {}", path.display());
    model.cfg = cfg;
    Ok((model, hash))
}

fn finish_training(
    cli: &Cli,
    model: &SceneModel,
    command: &str,
    parent: Option<String>,
    inputs: &[(&str, String)],
    log: &[LogEntry],
    started: Instant,
) -> Result<()> {
    let out = out_dir(cli)?;
    let ckpt = model.to_checkpoint(parent)?;
    let path = out.join("model.ckpt");
    ckpt.save(&path)?;
    write_json(&out.join("train_log.json"), log)?;
    let mut m = Manifest::new(command, cli.seed, model.cfg.to_text());
    for (k, v) in inputs {
        m.inputs.insert((*k).into(), v.clone());
    }
    m.outputs.insert("checkpoint".into(), path.display().to_string());
    m.outputs.insert("content_hash".into(), ckpt.content_hash()?);
    let groups: serde_json::Map<String, serde_json::Value> =
        ckpt.summary()?.into_iter().map(|(name, _, hash)| (name, json!(hash))).collect();
    m.summary = json!({
        "stage": model.stage,
        "flags": model.ablations.to_flags(),
        "steps": log.len(),
        "final": log.last().map(|e| e.loss),
        "group_hashes": groups,
    });
    m.elapsed_seconds = started.elapsed().as_secs_f64();
    m.write(&out)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn pretrain_ae(cli: &Cli, args: &DataArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = effective_config(cli, None)?;
    out_dir(cli)?;
    let records = load_records(&args.data, &cfg)?;
    let mut model = SceneModel::new(&cfg, cli.seed)?;
    let log = train::pretrain_ae(&mut model, &records, args.steps.unwrap_or(cfg.ae_steps), cli.seed)?;
    finish_training(cli, &model, "pretrain-ae", None, &[("data", args.data.display().to_string())], &log, started)
}

fn pretrain_backbone(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    out_dir(cli)?;
    let (mut model, parent) = load_model(cli, &args.ckpt)?;
    let records = load_records(&args.data.data, &model.cfg)?;
    let data = TrainData::new(&model, records)?;
    let steps = args.data.steps.unwrap_or(model.cfg.backbone_steps);
    let log = train::pretrain_backbone(&mut model, &data, steps, cli.seed)?;
    let inputs = [("data", args.data.data.display().to_string()), ("checkpoint", parent.clone())];
    finish_training(cli, &model, "pretrain-backbone", Some(parent), &inputs, &log, started)
}

fn ablations(a: &AblationArgs) -> Ablations {
    Ablations {
        no_spatial_cond: a.no_spatial_cond,
        no_temporal_cond: a.no_temporal_cond,
        no_depth_input: a.no_depth_input,
        no_depth_loss: a.no_depth_loss,
        fix_lrm: a.fix_lrm,
        use_gt_depth_cloud: a.use_gt_depth_cloud,
    }
}

fn train_stage(cli: &Cli, args: &StageArgs) -> Result<()> {
    let started = Instant::now();
    out_dir(cli)?;
    let (mut model, parent) = load_model(cli, &args.train.ckpt)?;
    model.ablations = model.ablations.merge(ablations(&args.ablations));
    let stage = match args.stage {
        StageArg::LrmCcnWarmup => Stage::LrmCcnWarmup,
        StageArg::LrmCcnIntervals => Stage::LrmCcnIntervals,
        StageArg::Joint => Stage::Joint,
        StageArg::Layout => Stage::Layout,
    };
    let default_steps = match stage {
        Stage::LrmCcnWarmup => model.cfg.warmup_steps,
        Stage::LrmCcnIntervals => model.cfg.intervals_steps,
        Stage::Joint => model.cfg.joint_steps,
        Stage::Layout => model.cfg.layout_steps,
    };
    let records = load_records(&args.train.data.data, &model.cfg)?;
    let data = TrainData::new(&model, records)?;
    let log = train::run_stage(&mut model, &data, stage, args.train.data.steps.unwrap_or(default_steps), cli.seed)?;
    let inputs = [("data", args.train.data.data.display().to_string()), ("checkpoint", parent.clone())];
    finish_training(cli, &model, "train", Some(parent), &inputs, &log, started)
}

/// The clip whose first frame, trajectory and layout drive generation.
fn source_record(args: &GenerateArgs, cfg: &RunConfig) -> Result<ClipRecord> {
    let src = &args.source;
    if let Some(data) = &src.data {
        let records = load_records(data, cfg)?;
        let key = src.record.as_deref().unwrap_or("0");
        let found = records
            .iter()
            .position(|r| r.name == key)
            .or_else(|| key.parse::<usize>().ok().filter(|&i| i < records.len()));
        let i = found.with_context(|| format!("no record {key:?} in {}", data.display()))?;
        return Ok(records.into_iter().nth(i).expect("index checked"));
    }
    let params = DatasetParams {
        seed: src.scene_seed,
        scenes: 1,
        records_per_scene: 1,
        record_length: src.length,
        kinds: vec![TrajectoryKind::from_str(&src.kind)?],
        trajectory: trajectory_params(cfg)?,
        ..Default::default()
    };
    Ok(generate_dataset(&params)?.remove(0))
}

fn input_frame(record: &ClipRecord, i: usize) -> InputFrame<'_> {
    let f = &record.frames[i];
    InputFrame { image: &f.image, depth: &record.mono[i], gt_depth: f.depth.as_deref(), pose: f.pose }
}

fn generate(cli: &Cli, args: &GenerateArgs) -> Result<()> {
    let started = Instant::now();
    let out = out_dir(cli)?;
    let (model, ckpt_hash) = load_model(cli, &args.ckpt)?;
    let record = source_record(args, &model.cfg)?;
    let poses = record.poses();
    let last = record.len() - 1;
    let (frames, windows, extra): (Vec<Vec<f32>>, Vec<WindowLog>, serde_json::Value) = match args.task {
        Task::Perpetual => {
            let reference_depth = record.frames[0].mean_depth();
            let run = run_perpetual(&model, input_frame(&record, 0), &poses, reference_depth, cli.seed)?;
            let temporal_picks = run.windows.iter().filter(|w| w.temporal_frame_selected).count();
            (run.frames, run.windows, json!({ "bank_size": run.bank.len(), "temporal_frame_selected": temporal_picks }))
        }
        Task::Interp => {
            let run = run_sparse_interpolation(
                &model,
                input_frame(&record, 0),
                input_frame(&record, last),
                &poses,
                args.two_pass,
                cli.seed,
            )?;
            (run.frames, Vec::new(), json!({ "two_pass": args.two_pass }))
        }
        Task::Layout => {
            let depths: Vec<&[f64]> = record
                .frames
                .iter()
                .map(|f| f.depth.as_deref().context("layout generation needs depth maps"))
                .collect::<Result<_>>()?;
            let semantics: Vec<&[u8]> = record
                .frames
                .iter()
                .map(|f| f.semantic.as_deref().context("layout generation needs semantic maps"))
                .collect::<Result<_>>()?;
            let run = run_layout(&model, &LayoutControls { depths, semantics }, &poses, cli.seed)?;
            (run.frames, run.windows, json!({ "bank_size": run.bank.len() }))
        }
    };
    ensure!(frames.len() == poses.len(), "generated {} frames for {} poses", frames.len(), poses.len());
    let size = model.cfg.image_size;
    write_video(&out, &frames, &poses, size)?;
    let reference: Vec<Vec<f32>> = record.frames.iter().map(|f| f.image.clone()).collect();
    write_video(&out.join("reference"), &reference, &poses, size)?;
    let report = photometric_report(&frames, &reference, size, size)?;

    let task = match args.task {
        Task::Interp => "interp",
        Task::Perpetual => "perpetual",
        Task::Layout => "layout",
    };
    let mut m = Manifest::new(&format!("generate {task}"), cli.seed, model.cfg.to_text());
    m.inputs.insert("checkpoint".into(), ckpt_hash);
    m.inputs.insert("record".into(), record.name.clone());
    m.outputs.insert("frames".into(), out.join("frames").display().to_string());
    m.outputs.insert("reference".into(), out.join("reference").display().to_string());
    m.windows = windows;
    m.summary = json!({
        "task": task,
        "frames": frames.len(),
        "flags": model.ablations.to_flags(),
        "mean_psnr": report.mean_psnr,
        "mean_ssim": report.mean_ssim,
        "details": extra,
    });
    m.elapsed_seconds = started.elapsed().as_secs_f64();
    m.write(&out)?;
    log::info!("{task}: {} frames, mean PSNR {:.2} dB vs reference", frames.len(), report.mean_psnr.0);
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    frames: usize,
    #[serde(flatten)]
    photometric: PhotometricReport,
    estimator: String,
    /// Frames whose poses were aligned and scored.
    pose_frames: Vec<usize>,
    r_dist: f64,
    t_dist: f64,
    alignment_scale: f64,
    /// Fréchet distance between autoencoder latent statistics; not
    /// comparable to image-feature FID.
    latent_frechet: Option<f64>,
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = effective_config(cli, None)?;
    let out = out_dir(cli)?;
    let (generated, w, h) = read_frames(&args.generated)?;
    let (reference, rw, rh) = read_frames(&args.reference)?;
    ensure!((w, h) == (rw, rh), "generated frames are {w}×{h}, reference frames {rw}×{rh}");
    ensure!(
        generated.len() == reference.len(),
        "{} generated frames against {} reference frames",
        generated.len(),
        reference.len()
    );
    let photometric = photometric_report(&generated, &reference, w, h)?;

    let ref_poses = read_poses(&args.reference.join("poses.json"))?;
    ensure!(ref_poses.len() == reference.len(), "reference has {} poses for {} frames", ref_poses.len(), reference.len());
    let (estimated, estimator): (Vec<Pose>, String) = if let Some(path) = &args.estimated {
        (read_poses(path)?, format!("file:{}", path.display()))
    } else if args.oracle {
        let est = OracleEstimator {
            rotation_noise: cfg.rotation_noise,
            translation_noise: cfg.translation_noise,
            seed: cli.seed,
        };
        (est.estimate(&ref_poses), format!("oracle(rot={}, trans={})", cfg.rotation_noise, cfg.translation_noise))
    } else {
        (read_poses(&args.generated.join("poses.json"))?, "conditioning poses".into())
    };
    ensure!(estimated.len() == ref_poses.len(), "{} estimated poses for {} frames", estimated.len(), ref_poses.len());
    let mut pose_frames = keyframe_indices(ref_poses.len());
    if pose_frames.len() < 2 {
        pose_frames = (0..ref_poses.len()).collect();
    }
    let pick = |p: &[Pose]| pose_frames.iter().map(|&i| p[i]).collect::<Vec<_>>();
    let (est_k, ref_k) = (pick(&estimated), pick(&ref_poses));
    let alignment = align_trajectory(&est_k, &ref_k)?;
    let pm = pose_metrics(&alignment.poses, &ref_k)?;

    let latent_frechet = match &args.ckpt {
        Some(path) => {
            let (model, _) = load_model(cli, path)?;
            let a: Vec<&[f32]> = generated.iter().map(Vec::as_slice).collect();
            let b: Vec<&[f32]> = reference.iter().map(Vec::as_slice).collect();
            Some(frechet_distance(&model.latent_features(&a)?, &model.latent_features(&b)?)?)
        }
        None => None,
    };

    let report = EvalReport {
        frames: generated.len(),
        photometric,
        estimator,
        pose_frames,
        r_dist: pm.r_dist,
        t_dist: pm.t_dist,
        alignment_scale: alignment.scale,
        latent_frechet,
    };
    write_json(&out.join("report.json"), &report)?;
    let mut m = Manifest::new("eval", cli.seed, cfg.to_text());
    m.inputs.insert("generated".into(), args.generated.display().to_string());
    m.inputs.insert("reference".into(), args.reference.display().to_string());
    m.outputs.insert("report".into(), out.join("report.json").display().to_string());
    m.summary = json!({
        "mean_psnr": report.photometric.mean_psnr,
        "mean_ssim": report.photometric.mean_ssim,
        "r_dist": report.r_dist,
        "t_dist": report.t_dist,
    });
    m.elapsed_seconds = started.elapsed().as_secs_f64();
    m.write(&out)?;
    println!("{}", serde_json::to_string_pretty(&m.summary)?);
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("cannot load {}", path.display()))?;
    let groups: Vec<serde_json::Value> = ckpt
        .summary()?
        .into_iter()
        .map(|(name, params, hash)| json!({ "name": name, "params": params, "hash": hash }))
        .collect();
    if groups.is_empty() {
        bail!("{} has no parameter groups", path.display());
    }
    let info = json!({
        "stage": ckpt.stage,
        "flags": ckpt.flags,
        "parent": ckpt.parent,
        "content_hash": ckpt.content_hash()?,
        "groups": groups,
        "config": ckpt.config,
    });
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(())
}
