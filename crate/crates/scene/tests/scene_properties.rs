use scenegen_geometry::{
    frustum_overlap_score, splat_render, unproject_depth_map, CameraModel, DepthView, FeaturePointCloud, Pose, Vector3,
    DEFAULT_FAR,
};
use scenegen_scene::*;

fn scene(seed: u64) -> SceneDescription {
    generate_scene(seed, &SceneParams::default()).unwrap()
}

/// Independent ray/box test: intersect the ray with each of the six face
/// planes and keep the nearest point that lies on the face rectangle.
fn brute_force_t(scene: &SceneDescription, o: Vector3<f64>, d: Vector3<f64>) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > 0.0 && best.map_or(true, |b| t < b) {
            best = Some(t);
        }
    };
    if d.y != 0.0 {
        let t = -o.y / d.y;
        let p = o + d * t;
        if p.x.abs() <= GROUND_HALF_SIZE && p.z.abs() <= GROUND_HALF_SIZE {
            consider(t);
        }
    }
    for b in &scene.boxes {
        for axis in 0..3 {
            if d[axis] == 0.0 {
                continue;
            }
            for plane in [b.min[axis], b.max[axis]] {
                let t = (plane - o[axis]) / d[axis];
                let p = o + d * t;
                let inside = (0..3).filter(|&a| a != axis).all(|a| p[a] >= b.min[a] - 1e-9 && p[a] <= b.max[a] + 1e-9);
                if inside {
                    consider(t);
                }
            }
        }
    }
    best
}

#[test]
fn rendering_is_deterministic() {
    let s = scene(4);
    let traj = generate_trajectory(TrajectoryKind::RandomWalk, 5, &s, 4, &TrajectoryParams::default()).unwrap();
    let again = generate_trajectory(TrajectoryKind::RandomWalk, 5, &s, 4, &TrajectoryParams::default()).unwrap();
    assert_eq!(traj, again);
    for p in &traj.poses {
        assert_eq!(render_view(&s, p, &traj.camera), render_view(&s, p, &traj.camera));
    }
}

#[test]
fn rendered_depth_matches_analytic_intersection() {
    let cam = default_camera();
    for seed in 0..3 {
        let s = scene(seed);
        let traj = generate_trajectory(TrajectoryKind::Orbit, 3, &s, seed, &TrajectoryParams::default()).unwrap();
        for pose in &traj.poses {
            let f = render_view(&s, pose, &cam);
            let depth = f.depth.as_ref().unwrap();
            for v in 0..cam.height {
                for u in 0..cam.width {
                    let d = pose.rotation * cam.pixel_direction(u, v);
                    let expected = brute_force_t(&s, pose.translation, d).filter(|&t| t < DEFAULT_FAR).unwrap_or(DEFAULT_FAR);
                    let got = depth[v * cam.width + u];
                    assert!((got - expected).abs() < 1e-6, "pixel ({u},{v}): {got} vs {expected}");
                }
            }
            assert!(depth.iter().all(|&d| d > 0.0));
            assert!(f.image.iter().all(|&c| (0.0..=1.0).contains(&c)));
        }
    }
}

#[test]
fn render_unproject_splat_round_trip() {
    let s = scene(2);
    let cam = CameraModel::with_fov(16, 60.0).unwrap();
    let traj = generate_trajectory(TrajectoryKind::Dolly, 2, &s, 2, &TrajectoryParams::default()).unwrap();
    let pose = traj.poses[0];
    let f = render_view(&s, &pose, &cam);
    let depth = f.depth.unwrap();
    let pts = unproject_depth_map(&cam, &pose, &depth).unwrap();
    let n = pts.len();
    let cloud = FeaturePointCloud::new(pts, vec![0.0; n], 1, vec![0; n]).unwrap();
    let out = splat_render(&cloud, &[(cam, pose)]).unwrap();
    assert!(out.visibility.iter().all(|&v| v));
    for (a, b) in out.depths.iter().zip(&depth) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn mono_depth_correlates_with_ground_truth() {
    let s = scene(6);
    let traj = generate_trajectory(TrajectoryKind::Lawnmower, 6, &s, 6, &TrajectoryParams::default()).unwrap();
    for (i, pose) in traj.poses.iter().enumerate() {
        let f = render_view(&s, pose, &traj.camera);
        let mono = mono_depth_stub(&f, i as u64, &MonoDepthParams::default()).unwrap();
        let d = f.depth.as_ref().unwrap();
        let n = d.len() as f64;
        let (ma, mb) = (d.iter().sum::<f64>() / n, mono.iter().sum::<f64>() / n);
        let cov: f64 = d.iter().zip(&mono).map(|(a, b)| (a - ma) * (b - mb)).sum();
        let va: f64 = d.iter().map(|a| (a - ma).powi(2)).sum();
        let vb: f64 = mono.iter().map(|b| (b - mb).powi(2)).sum();
        let corr = cov / (va * vb).sqrt();
        assert!(corr > 0.99, "frame {i}: correlation {corr}");
    }
}

#[test]
fn orbit_is_equidistant_from_center() {
    let s = scene(1);
    let traj = generate_trajectory(TrajectoryKind::Orbit, 60, &s, 1, &TrajectoryParams::default()).unwrap();
    let c = traj.orbit_center.unwrap();
    let c = Vector3::new(c[0], c[1], c[2]);
    let r0 = (traj.poses[0].center() - c).norm();
    for p in &traj.poses {
        assert!(((p.center() - c).norm() - r0).abs() < 1e-6);
    }
}

#[test]
fn trajectories_respect_step_and_overlap_bounds() {
    let params = TrajectoryParams::default();
    let cam = params.camera;
    for (seed, kind) in TrajectoryKind::ALL.into_iter().enumerate() {
        let s = scene(seed as u64);
        let traj = generate_trajectory(kind, 40, &s, seed as u64, &params).unwrap();
        assert_eq!(traj.len(), 40);
        for w in traj.poses.windows(2) {
            assert!((w[1].center() - w[0].center()).norm() <= params.max_step);
            let d = render_view(&s, &w[0], &cam).depth.unwrap();
            let score = frustum_overlap_score(DepthView { camera: &cam, pose: &w[0], depth: &d }, &[w[1]], &cam);
            // the generator scores at reduced resolution
            assert!(score >= params.min_overlap - 0.05, "{kind}: {score}");
        }
    }
}

#[test]
fn lawnmower_revisits_earlier_regions() {
    let s = scene(3);
    let params = TrajectoryParams::default();
    let traj = generate_trajectory(TrajectoryKind::Lawnmower, 200, &s, 3, &params).unwrap();
    let cam = params.camera.downscaled(4).unwrap();
    let depths: Vec<Vec<f64>> = traj.poses.iter().map(|p| render_depth(&s, p, &cam)).collect();
    let mut found = None;
    'search: for i in 0..traj.len() {
        for j in (i + 61)..traj.len() {
            let score = frustum_overlap_score(
                DepthView { camera: &cam, pose: &traj.poses[i], depth: &depths[i] },
                &[traj.poses[j]],
                &cam,
            );
            if score > 0.5 {
                found = Some((i, j, score));
                break 'search;
            }
        }
    }
    assert!(found.is_some(), "no revisit with gap > 60 frames");
}

#[test]
fn layout_maps_match_render_view() {
    let s = scene(8);
    let traj = generate_trajectory(TrajectoryKind::Dolly, 3, &s, 8, &TrajectoryParams::default()).unwrap();
    let maps = render_layout_maps(&s, &traj);
    assert_eq!(maps.len(), 3);
    for (m, p) in maps.iter().zip(&traj.poses) {
        let f = render_view(&s, p, &traj.camera);
        assert_eq!(Some(&m.depth), f.depth.as_ref());
        assert_eq!(Some(&m.semantic), f.semantic.as_ref());
    }
}

#[test]
fn dataset_records_are_complete_and_round_trip() {
    let params = DatasetParams { scenes: 2, records_per_scene: 1, record_length: 13, ..Default::default() };
    let records = generate_dataset(&params).unwrap();
    assert_eq!(records.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &params, &records).unwrap();
    assert_eq!(manifest.records.len(), 2);
    let (read_manifest, read) = read_dataset(dir.path()).unwrap();
    assert_eq!(read_manifest, manifest);
    for (a, b) in records.iter().zip(&read) {
        assert_eq!(a.len() % 4, 1);
        assert_eq!(b.len(), a.len());
        assert_eq!(b.mono.len(), a.len());
        assert_eq!(a.scene, b.scene);
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.pose, fb.pose);
            assert_eq!(fa.semantic, fb.semantic);
            for (x, y) in fa.image.iter().zip(&fb.image) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
            for (x, y) in fa.depth.as_ref().unwrap().iter().zip(fb.depth.as_ref().unwrap()) {
                assert!((x - y).abs() <= 1e-5 * x.abs());
            }
        }
    }
    assert!(dir.path().join("record_0000/frame_012.png").exists());
}

#[test]
fn pose_is_camera_to_world() {
    let eye = Vector3::new(0.0, 1.0, 9.0);
    let p = Pose::look_at(eye, Vector3::new(0.0, 1.0, 0.0), Vector3::y()).unwrap();
    assert!((p.forward() - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
}
