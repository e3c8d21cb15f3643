//! Evaluation metrics against brute-force oracles and constructed
//! trajectories.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenegen_core::metrics::{
    align_trajectory, frechet_distance, keyframe_indices, photometric_report, pose_metrics, psnr, revisit_frames, ssim,
    temporal_discontinuity, OracleEstimator,
};
use scenegen_geometry::Pose;

fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(0.0f32..1.0)).collect()
}

/// SSIM with explicit 2-D Gaussian windows.
fn ssim_oracle(a: &[f32], b: &[f32], w: usize, h: usize, ch: usize) -> f64 {
    let g1: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let s: f64 = g1.iter().sum();
    let mut total = 0.0;
    let mut count = 0;
    for c in 0..ch {
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wt = g1[dy] * g1[dx] / (s * s);
                        let i = ((y0 + dy) * w + x0 + dx) * ch + c;
                        let (va, vb) = (a[i] as f64, b[i] as f64);
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let (c1, c2) = (1e-4, 9e-4);
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

fn line_trajectory(n: usize) -> Vec<Pose> {
    (0..n)
        .map(|i| {
            let a = i as f64 * 0.05;
            let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), a).into_inner();
            Pose { rotation: rot, translation: Vector3::new(i as f64 * 0.3, 0.1 * (i as f64).sin(), 0.02 * i as f64) }
        })
        .collect()
}

#[test]
fn psnr_and_ssim_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (w, h) in [(16, 16), (23, 13)] {
        let a = random_image(&mut rng, w * h * 3);
        let b: Vec<f32> = a.iter().map(|v| (v + rng.random_range(-0.2f32..0.2)).clamp(0.0, 1.0)).collect();
        let mse = a.iter().zip(&b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.len() as f64;
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-6);
        let got = ssim(&a, &b, w, h, 3).unwrap();
        let want = ssim_oracle(&a, &b, w, h, 3);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!((ssim(&a, &a, w, h, 3).unwrap() - 1.0).abs() < 1e-9);
    }
    assert!(ssim(&[0.0; 30], &[0.0; 30], 10, 1, 3).is_err());
}

#[test]
fn identical_videos_report_infinite_psnr() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames: Vec<Vec<f32>> = (0..3).map(|_| random_image(&mut rng, 16 * 16 * 3)).collect();
    let r = photometric_report(&frames, &frames, 16, 16).unwrap();
    assert_eq!(r.mean_psnr.0, f64::INFINITY);
    assert!((r.mean_ssim - 1.0).abs() < 1e-9);
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["mean_psnr"], "inf");
    assert_eq!(temporal_discontinuity(&frames, &frames).unwrap(), 0.0);
}

#[test]
fn rotation_distance_of_a_quarter_turn() {
    let reference = line_trajectory(5);
    let quarter = Rotation3::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2).into_inner();
    let rotated: Vec<Pose> = reference.iter().map(|p| Pose { rotation: p.rotation * quarter, ..*p }).collect();
    let m = pose_metrics(&rotated, &reference).unwrap();
    assert!((m.r_dist - FRAC_PI_2).abs() < 1e-9, "{m:?}");
    assert!(m.t_dist.abs() < 1e-12);
}

#[test]
fn translation_distance_of_a_unit_offset() {
    let reference = line_trajectory(7);
    let shifted: Vec<Pose> =
        reference.iter().map(|p| Pose { translation: p.translation + Vector3::new(0.6, 0.0, 0.8), ..*p }).collect();
    let m = pose_metrics(&shifted, &reference).unwrap();
    assert!((m.t_dist - 1.0).abs() < 1e-12, "{m:?}");
    assert!(m.r_dist.abs() < 1e-7);
}

#[test]
fn keyframes_every_tenth_up_to_two_hundred() {
    let k = keyframe_indices(201);
    assert_eq!(k.len(), 21);
    assert_eq!(k, (0..=200).step_by(10).collect::<Vec<_>>());
    assert_eq!(keyframe_indices(500), k);
    assert_eq!(keyframe_indices(37), vec![0, 10, 20, 30]);
    assert!(keyframe_indices(0).is_empty());
}

#[test]
fn alignment_recovers_half_scale_exactly() {
    let reference = line_trajectory(9);
    // twice the scale, then moved by a rigid transform
    let c0 = reference[0].translation;
    let doubled: Vec<Pose> =
        reference.iter().map(|p| Pose { translation: c0 + (p.translation - c0) * 2.0, ..*p }).collect();
    let rigid = Pose { rotation: Rotation3::from_euler_angles(0.3, -0.2, 1.1).into_inner(), translation: Vector3::new(4.0, -1.0, 2.0) };
    let estimated: Vec<Pose> = doubled.iter().map(|p| rigid.compose(p)).collect();
    let a = align_trajectory(&estimated, &reference).unwrap();
    assert!((a.scale - 0.5).abs() < 1e-12, "{}", a.scale);
    for (p, q) in a.poses.iter().zip(&reference) {
        assert!((p.translation - q.translation).norm() < 1e-9);
        assert!(p.rotation_angle_to(q) < 1e-7);
    }
    let m = pose_metrics(&a.poses, &reference).unwrap();
    assert!(m.r_dist < 1e-7 && m.t_dist < 1e-9);
    // aligning an aligned trajectory changes nothing
    let again = align_trajectory(&a.poses, &reference).unwrap();
    assert!((again.scale - 1.0).abs() < 1e-12);
    assert!(align_trajectory(&vec![reference[0]; 3], &reference[..3]).is_err());
}

#[test]
fn oracle_estimator_is_seeded_and_scaled() {
    let reference = line_trajectory(50);
    let est = OracleEstimator { rotation_noise: 0.0, translation_noise: 0.0, seed: 3 };
    assert_eq!(est.estimate(&reference), reference);
    let noisy = OracleEstimator { rotation_noise: 0.01, translation_noise: 0.02, seed: 3 };
    assert_eq!(noisy.estimate(&reference), noisy.estimate(&reference));
    let m = pose_metrics(&noisy.estimate(&reference), &reference).unwrap();
    assert!(m.r_dist > 0.0 && m.r_dist < 0.05 && m.t_dist > 0.0 && m.t_dist < 0.1, "{m:?}");
}

#[test]
fn frechet_distance_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-9);
    let c = 0.7;
    let shifted: Vec<Vec<f64>> = a.iter().map(|v| v.iter().map(|x| x + c).collect()).collect();
    assert!((frechet_distance(&a, &shifted).unwrap() - 4.0 * c * c).abs() < 1e-6);
    let mut last = 0.0;
    for sigma in [0.1, 0.3, 0.9] {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let noisy: Vec<Vec<f64>> =
            a.iter().map(|v| v.iter().map(|x| x + sigma * r.random_range(-1.0..1.0)).collect()).collect();
        let d = frechet_distance(&a, &noisy).unwrap();
        assert!(d > last, "sigma {sigma}: {d} <= {last}");
        last = d;
    }
}

#[test]
fn revisits_are_found_only_after_the_gap() {
    // out and back along a line
    let poses: Vec<Pose> = (0..21)
        .map(|i| {
            let x = if i <= 10 { i as f64 } else { 20.0 - i as f64 } * 0.1;
            Pose::from_translation(Vector3::new(x, 0.0, 0.0))
        })
        .collect();
    let r = revisit_frames(&poses, 5, 0.05, 0.1);
    // frame i > 10 sits on frame 20 − i, at least five steps earlier when i ≥ 13
    assert_eq!(r, (13..21).collect::<Vec<_>>());
}

proptest! {
    #[test]
    fn pose_metrics_vanish_on_identical_trajectories(n in 2usize..30) {
        let t = line_trajectory(n);
        let m = pose_metrics(&t, &t).unwrap();
        prop_assert!(m.r_dist < 1e-7);
        prop_assert_eq!(m.t_dist, 0.0);
    }

    #[test]
    fn alignment_is_invariant_to_similarity_transforms(s in 0.1f64..10.0, ax in -3.0f64..3.0, tx in -5.0f64..5.0) {
        let reference = line_trajectory(6);
        let c0 = reference[0].translation;
        let rigid = Pose { rotation: Rotation3::from_euler_angles(ax, 0.5, -ax).into_inner(), translation: Vector3::new(tx, 1.0, -tx) };
        let est: Vec<Pose> = reference
            .iter()
            .map(|p| rigid.compose(&Pose { translation: c0 + (p.translation - c0) * s, ..*p }))
            .collect();
        let a = align_trajectory(&est, &reference).unwrap();
        prop_assert!((a.scale * s - 1.0).abs() < 1e-9);
        let m = pose_metrics(&a.poses, &reference).unwrap();
        prop_assert!(m.t_dist < 1e-8 && m.r_dist < 1e-6);
    }
}
