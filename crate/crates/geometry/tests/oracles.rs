//! Brute-force oracles and invariants for the geometry primitives.

use nalgebra::{Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenegen_geometry::*;

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = Unit::new_normalize(axis + Vector3::new(1e-3, 0.0, 0.0));
    let rot = Rotation3::from_axis_angle(&axis, rng.random_range(-3.1..3.1));
    let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    Pose::new(rot.into_inner(), t).unwrap()
}

fn random_camera(rng: &mut ChaCha8Rng) -> CameraModel {
    let w = rng.random_range(2..24);
    let h = rng.random_range(2..24);
    CameraModel::new(
        rng.random_range(1.0..40.0),
        rng.random_range(1.0..40.0),
        rng.random_range(0.1..w as f64 - 0.1),
        rng.random_range(0.1..h as f64 - 0.1),
        w,
        h,
    )
    .unwrap()
}

#[test]
fn plucker_unit_direction_and_orthogonal_moment() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let cam = random_camera(&mut rng);
        let pose = random_pose(&mut rng);
        let map = compute_plucker_map(&cam, &pose);
        assert_eq!(map.data.len(), cam.num_pixels());
        for v in 0..cam.height {
            for u in 0..cam.width {
                let d = map.direction(u, v);
                let m = map.moment(u, v);
                assert!((d.norm() - 1.0).abs() < 1e-6);
                assert!(d.dot(&m).abs() < 1e-6);
            }
        }
    }
}

/// Reference z-buffer: project every point, then take the explicit argmin of
/// (depth, view id, index) over the points landing on each pixel.
fn brute_force_winners(
    points: &[Vector3<f64>],
    view_ids: &[usize],
    cam: &CameraModel,
    pose: &Pose,
) -> Vec<Option<usize>> {
    let mut per_pixel: Vec<Vec<(f64, usize, usize)>> = vec![Vec::new(); cam.num_pixels()];
    for (i, p) in points.iter().enumerate() {
        let pc = pose.rotation.transpose() * (p - pose.translation);
        if pc.z <= 0.0 {
            continue;
        }
        let x = cam.fx * pc.x / pc.z + cam.cx;
        let y = cam.fy * pc.y / pc.z + cam.cy;
        if x < 0.0 || y < 0.0 || x >= cam.width as f64 || y >= cam.height as f64 {
            continue;
        }
        let (u, v) = (x.floor() as usize, y.floor() as usize);
        per_pixel[v * cam.width + u].push((pc.z, view_ids[i], i));
    }
    per_pixel
        .into_iter()
        .map(|cands| {
            cands
                .into_iter()
                .min_by(|a, b| a.partial_cmp(b).unwrap())
                .map(|(_, _, i)| i)
        })
        .collect()
}

#[test]
fn splat_matches_brute_force_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cam = CameraModel::new(8.0, 8.0, 4.0, 4.0, 8, 8).unwrap();
    for trial in 0..200 {
        let k = rng.random_range(1..=500);
        let mut points: Vec<Vector3<f64>> = (0..k)
            .map(|_| Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..6.0)))
            .collect();
        // exact duplicates exercise the tie-break
        if k > 4 {
            points[1] = points[0];
            points[3] = points[2];
        }
        let view_ids: Vec<usize> = (0..k).map(|i| if i < k / 2 { 0 } else { 1 }).collect();
        let features: Vec<f64> = (0..k).map(|i| i as f64).collect();
        let pose = if trial % 2 == 0 {
            Pose::identity()
        } else {
            Pose::look_at(Vector3::new(0.5, -0.2, -1.0), Vector3::new(0.0, 0.0, 3.0), Vector3::y()).unwrap()
        };
        let expected = brute_force_winners(&points, &view_ids, &cam, &pose);
        let got: Vec<Option<usize>> = splat_winners(&points, &view_ids, &cam, &pose)
            .into_iter()
            .map(|h| h.map(|h| h.index))
            .collect();
        assert_eq!(got, expected, "trial {trial}");

        let cloud = FeaturePointCloud::new(points, features, 1, view_ids).unwrap();
        let rendered = splat_render(&cloud, &[(cam, pose)]).unwrap();
        for (pix, w) in expected.iter().enumerate() {
            match w {
                Some(i) => assert_eq!(rendered.features[pix], *i as f64),
                None => {
                    assert!(!rendered.visibility[pix]);
                    assert_eq!(rendered.features[pix].to_bits(), 0f64.to_bits());
                }
            }
        }
    }
}

#[test]
fn splat_round_trip_reproduces_source_depth() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cam = CameraModel::new(8.0, 8.0, 4.0, 4.0, 8, 8).unwrap();
    for _ in 0..50 {
        let pose = random_pose(&mut rng);
        let depth: Vec<f64> = (0..cam.num_pixels()).map(|_| rng.random_range(DEFAULT_NEAR..DEFAULT_FAR)).collect();
        let points = unproject_depth_map(&cam, &pose, &depth).unwrap();
        let n = points.len();
        let cloud = FeaturePointCloud::new(points, vec![1.0; n], 1, vec![0; n]).unwrap();
        let out = splat_render(&cloud, &[(cam, pose)]).unwrap();
        assert!(out.visibility.iter().all(|&v| v));
        let max_err = out.depths.iter().zip(&depth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_err < 1e-5, "max depth error {max_err}");
    }
}

#[test]
fn overlap_invariant_under_global_rigid_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cam = CameraModel::new(10.0, 10.0, 8.0, 8.0, 16, 16).unwrap();
    for _ in 0..20 {
        let cand = random_pose(&mut rng);
        let depth: Vec<f64> = (0..cam.num_pixels()).map(|_| rng.random_range(1.0..8.0)).collect();
        let window: Vec<Pose> = (0..4)
            .map(|_| {
                let jitter = Pose::new(
                    Rotation3::from_euler_angles(
                        rng.random_range(-0.3..0.3),
                        rng.random_range(-0.3..0.3),
                        rng.random_range(-0.3..0.3),
                    )
                    .into_inner(),
                    Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                )
                .unwrap();
                cand.compose(&jitter)
            })
            .collect();
        let before = frustum_overlap_score(DepthView { camera: &cam, pose: &cand, depth: &depth }, &window, &cam);
        let g = random_pose(&mut rng);
        let cand2 = g.compose(&cand);
        let window2: Vec<Pose> = window.iter().map(|p| g.compose(p)).collect();
        let after = frustum_overlap_score(DepthView { camera: &cam, pose: &cand2, depth: &depth }, &window2, &cam);
        // a point exactly on an image border may flip under round-off
        assert!((before - after).abs() <= 2.0 / cam.num_pixels() as f64, "{before} vs {after}");
    }
}

proptest! {
    #[test]
    fn unprojected_depth_stays_inside_range(raw in -30.0f64..30.0, near in 0.01f64..5.0, span in 0.01f64..50.0) {
        let far = near + span;
        let d = distance_to_depth(raw, near, far).unwrap();
        prop_assert!(d > near && d < far);
    }

    #[test]
    fn overlap_score_is_a_fraction(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = CameraModel::new(6.0, 6.0, 4.0, 4.0, 8, 8).unwrap();
        let cand = random_pose(&mut rng);
        let depth: Vec<f64> = (0..cam.num_pixels()).map(|_| rng.random_range(0.5..10.0)).collect();
        let window = vec![random_pose(&mut rng), random_pose(&mut rng)];
        let s = frustum_overlap_score(DepthView { camera: &cam, pose: &cand, depth: &depth }, &window, &cam);
        prop_assert!((0.0..=1.0).contains(&s));
    }
}
