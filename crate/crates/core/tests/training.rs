//! Stage freezing, zero-initialized control, learning on a micro config, and
//! checkpoint round trips.

mod common;

use std::collections::BTreeMap;

use candle_core::DType;
use common::{micro_config, micro_records, randomize_zero_params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenegen_core::checkpoint::Checkpoint;
use scenegen_core::diffusion::{diffusion_loss, predict_noise, sample_latents, ControlInput};
use scenegen_core::model::{Ablations, SceneModel, GROUP_NAMES};
use scenegen_core::nn::{randn, scalar, to_f64_vec};
use scenegen_core::train::{pretrain_ae, pretrain_backbone, run_stage, stage_groups, Stage, TrainData};
use scenegen_scene::{ClipRecord, TrajectoryKind};

fn hashes(model: &SceneModel) -> BTreeMap<String, String> {
    let ckpt = model.to_checkpoint(None).unwrap();
    GROUP_NAMES.iter().map(|g| (g.to_string(), ckpt.group_hash(g).unwrap().unwrap())).collect()
}

fn records() -> Vec<ClipRecord> {
    micro_records(32, 9, &[TrajectoryKind::Orbit, TrajectoryKind::Dolly], 2, 7)
}

fn trained_groups(model: &SceneModel, stage: Stage) -> Vec<String> {
    stage_groups(model, stage).iter().map(|g| g.name().to_string()).collect()
}

#[test]
fn each_stage_updates_exactly_its_groups() {
    let cfg = micro_config(32, "f32");
    for (stage, ablations) in [
        (Stage::LrmCcnWarmup, Ablations::default()),
        (Stage::LrmCcnIntervals, Ablations::default()),
        (Stage::Joint, Ablations::default()),
        (Stage::Joint, Ablations { fix_lrm: true, ..Default::default() }),
        (Stage::Layout, Ablations::default()),
    ] {
        let mut model = SceneModel::new(&cfg, 4).unwrap();
        // an untrained backbone has a zero output layer and passes no
        // gradient back to the control branches
        randomize_zero_params(&model.backbone.group, &mut ChaCha8Rng::seed_from_u64(2), 0.05);
        model.copy_backbone_into_controlnets().unwrap();
        model.ablations = ablations;
        let data = TrainData::new(&model, records()).unwrap();
        let before = hashes(&model);
        run_stage(&mut model, &data, stage, 3, 1).unwrap();
        let after = hashes(&model);
        let trained = trained_groups(&model, stage);
        for g in GROUP_NAMES {
            let changed = before[g] != after[g];
            assert_eq!(changed, trained.contains(&g.to_string()), "{stage} {ablations:?}: group {g} changed={changed}");
        }
        assert_eq!(model.stage, stage.name());
        if ablations.fix_lrm {
            assert!(!trained.contains(&"lrm".to_string()));
        }
    }
}

#[test]
fn fresh_controlnet_leaves_the_backbone_output_bit_identical() {
    let cfg = micro_config(32, "f32");
    let model = SceneModel::new(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = randn(&mut rng, &[1, 5, 4, 4, 16], DType::F32, model.device()).unwrap();
    let cond = randn(&mut rng, &[1, 5, 4, 4, 16], DType::F32, model.device()).unwrap();
    for t in [0.0, 250.0, 999.0] {
        let plain = to_f64_vec(&model.backbone.forward(&z, &[t], &[]).unwrap()).unwrap();
        let controls = [ControlInput { net: &model.scvg, cond: cond.clone(), weight: 1.0 }];
        let with = to_f64_vec(&predict_noise(&model.backbone, &controls, &z, &[t]).unwrap()).unwrap();
        assert_eq!(plain, with, "t={t}");
        let residuals = model.scvg.forward(&z, &[t], &cond).unwrap();
        assert!(residuals.iter().all(|r| to_f64_vec(r).unwrap().iter().all(|v| *v == 0.0)));
    }
    let controls = [ControlInput { net: &model.scvg, cond, weight: 1.0 }];
    let shape = [1, 5, 4, 4, 16];
    let a = sample_latents(&model.backbone, &model.schedule, &[], &shape, 5, 3, None).unwrap();
    let b = sample_latents(&model.backbone, &model.schedule, &controls, &shape, 5, 3, None).unwrap();
    assert_eq!(to_f64_vec(&a).unwrap(), to_f64_vec(&b).unwrap());
}

/// Diffusion loss of the backbone on fixed timesteps and noise.
fn eval_loss(model: &SceneModel, data: &TrainData) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut total = 0.0;
    for i in 0..16 {
        let r = i % data.latents.len();
        let z0 = data.latents[r].narrow(1, 0, 5).unwrap();
        let t = rng.random_range(0..model.schedule.len());
        let eps = randn(&mut rng, z0.dims(), model.dtype(), model.device()).unwrap();
        let z_t = model.schedule.q_sample(&z0, &[t], &eps).unwrap();
        let eps_hat = model.backbone.forward(&z_t, &[t as f64], &[]).unwrap();
        total += scalar(&diffusion_loss(&eps_hat, &eps).unwrap()).unwrap();
    }
    total / 16.0
}

#[test]
fn backbone_training_halves_the_diffusion_loss() {
    let mut cfg = micro_config(32, "f32");
    cfg.set("backbone.batch", "4").unwrap();
    cfg.set("backbone.lr", "3e-3").unwrap();
    let mut model = SceneModel::new(&cfg, 6).unwrap();
    let recs = records();
    pretrain_ae(&mut model, &recs, 50, 0).unwrap();
    let data = TrainData::new(&model, recs).unwrap();
    let before = eval_loss(&model, &data);
    let log = pretrain_backbone(&mut model, &data, 200, 0).unwrap();
    assert_eq!(log.len(), 200);
    let after = eval_loss(&model, &data);
    println!("diffusion loss {before:.2} -> {after:.2}");
    assert!(after < 0.5 * before, "{before} -> {after}");
}

#[test]
fn checkpoints_round_trip_weights_flags_and_outputs() {
    let cfg = micro_config(32, "f32");
    let mut model = SceneModel::new(&cfg, 8).unwrap();
    model.ablations = Ablations { no_depth_loss: true, fix_lrm: true, ..Default::default() };
    model.stage = "joint".into();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.to_checkpoint(Some("abc".into())).unwrap().save(&path).unwrap();
    let loaded = SceneModel::load(&path).unwrap();
    assert_eq!(loaded.ablations, model.ablations);
    assert_eq!(loaded.stage, "joint");
    assert_eq!(loaded.cfg, model.cfg);
    assert_eq!(hashes(&loaded), hashes(&model));
    let ckpt = Checkpoint::load(&path).unwrap();
    assert_eq!(ckpt.parent.as_deref(), Some("abc"));
    let img = vec![0.3f32; 32 * 32 * 3];
    let a = to_f64_vec(&model.encode_frames(&[&img]).unwrap()).unwrap();
    let b = to_f64_vec(&loaded.encode_frames(&[&img]).unwrap()).unwrap();
    assert_eq!(a, b);

    // a different seed gives different weights in every group
    let other = hashes(&SceneModel::new(&cfg, 9).unwrap());
    let mine = hashes(&model);
    assert!(GROUP_NAMES.iter().all(|g| other[*g] != mine[*g]));
    assert_eq!(hashes(&SceneModel::new(&cfg, 8).unwrap()), mine);
}
