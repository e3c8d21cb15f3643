use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenegen_geometry::{frustum_overlap_score, CameraModel, DepthView, Pose, Vector3, DEFAULT_FAR};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SceneError};
use crate::render::intersect_scene;
use crate::scene::SceneDescription;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Orbit,
    Dolly,
    Lawnmower,
    RandomWalk,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 4] =
        [TrajectoryKind::Orbit, TrajectoryKind::Dolly, TrajectoryKind::Lawnmower, TrajectoryKind::RandomWalk];

    pub fn name(self) -> &'static str {
        match self {
            TrajectoryKind::Orbit => "orbit",
            TrajectoryKind::Dolly => "dolly",
            TrajectoryKind::Lawnmower => "lawnmower",
            TrajectoryKind::RandomWalk => "random-walk",
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrajectoryKind {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SceneError::InvalidParams(format!("unknown trajectory kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub camera: CameraModel,
    /// Upper bound on the distance between consecutive camera centers.
    pub max_step: f64,
    /// Lower bound on the overlap score of consecutive frames.
    pub min_overlap: f64,
    pub max_attempts: usize,
    /// Lawnmower spacing along a row.
    pub lawnmower_step: f64,
    /// Lawnmower frames per row (positions are `0..=row_frames`).
    pub lawnmower_row_frames: usize,
    /// Lawnmower frames spent moving between rows.
    pub lawnmower_turn_frames: usize,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            camera: crate::default_camera(),
            max_step: 0.5,
            min_overlap: 0.3,
            max_attempts: 100,
            lawnmower_step: 0.15,
            lawnmower_row_frames: 40,
            lawnmower_turn_frames: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub poses: Vec<Pose>,
    pub camera: CameraModel,
    /// Center of the circle for orbit trajectories.
    pub orbit_center: Option<[f64; 3]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Sum of distances between consecutive camera centers.
    pub fn path_length(&self) -> f64 {
        self.poses.windows(2).map(|w| (w[1].center() - w[0].center()).norm()).sum()
    }
}

/// Z-depth map of the scene seen from `pose`, center rays only.
pub fn render_depth(scene: &SceneDescription, pose: &Pose, camera: &CameraModel) -> Vec<f64> {
    let mut depth = Vec::with_capacity(camera.num_pixels());
    for v in 0..camera.height {
        for u in 0..camera.width {
            let d = pose.rotation * camera.pixel_direction(u, v);
            let t = intersect_scene(scene, &pose.translation, &d).map(|h| h.t).unwrap_or(DEFAULT_FAR);
            depth.push(t.min(DEFAULT_FAR));
        }
    }
    depth
}

fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Pose {
    Pose::look_at(eye, target, Vector3::y()).expect("trajectory cameras never look straight up or down")
}

fn orbit(len: usize, rng: &mut ChaCha8Rng, max_step: f64) -> (Vec<Pose>, [f64; 3]) {
    let radius = rng.random_range(8.5..10.0);
    let height = rng.random_range(1.3..2.6);
    let start = rng.random_range(0.0..std::f64::consts::TAU);
    let arc = rng.random_range(0.3..0.8) * max_step;
    let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let center = Vector3::new(0.0, height, 0.0);
    let target = Vector3::new(0.0, 1.0, 0.0);
    let poses = (0..len)
        .map(|i| {
            let a = start + dir * arc / radius * i as f64;
            look_at(center + Vector3::new(radius * a.cos(), 0.0, radius * a.sin()), target)
        })
        .collect();
    (poses, [0.0, height, 0.0])
}

fn dolly(len: usize, rng: &mut ChaCha8Rng, max_step: f64) -> Vec<Pose> {
    let x = rng.random_range(-2.0..2.0);
    let height = rng.random_range(1.3..2.2);
    let (z0, z1) = (11.0, 7.0);
    let step = ((z0 - z1) / (len.max(2) - 1) as f64).min(0.8 * max_step);
    let pan = rng.random_range(-0.15..0.15);
    (0..len)
        .map(|i| {
            let eye = Vector3::new(x, height, z0 - step * i as f64);
            look_at(eye, eye + Vector3::new(pan, -0.2, -1.0))
        })
        .collect()
}

fn lawnmower(len: usize, rng: &mut ChaCha8Rng, p: &TrajectoryParams) -> Vec<Pose> {
    let height = rng.random_range(1.4..1.8);
    let z_start = rng.random_range(8.6..9.0);
    let half_row = p.lawnmower_step * p.lawnmower_row_frames as f64 / 2.0;
    let view = Vector3::new(0.0, -0.2, -1.0);
    let mut poses = Vec::with_capacity(len);
    let (mut x, mut z) = (-half_row, z_start);
    let mut dir = 1.0;
    // rows move toward the city and back so regions are revisited
    let mut z_dir = -1.0;
    let mut row = 0usize;
    'outer: loop {
        for k in 0..=p.lawnmower_row_frames {
            if poses.len() == len {
                break 'outer;
            }
            let xk = x + dir * p.lawnmower_step * k as f64;
            let eye = Vector3::new(xk, height, z);
            poses.push(look_at(eye, eye + view));
        }
        x += dir * p.lawnmower_step * p.lawnmower_row_frames as f64;
        for _ in 0..p.lawnmower_turn_frames.saturating_sub(1) {
            if poses.len() == len {
                break 'outer;
            }
            z += z_dir * p.lawnmower_step;
            let eye = Vector3::new(x, height, z);
            poses.push(look_at(eye, eye + view));
        }
        // the first pose of the next row completes the turn
        z += z_dir * p.lawnmower_step;
        dir = -dir;
        row += 1;
        if row % 2 == 0 {
            z_dir = -z_dir;
        }
    }
    poses
}

fn random_walk(len: usize, rng: &mut ChaCha8Rng, max_step: f64) -> Vec<Pose> {
    let (r_min, r_max) = (7.5, 10.5);
    let height = rng.random_range(1.3..2.4);
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    let r = rng.random_range(r_min..r_max);
    let mut pos = Vector3::new(r * a.cos(), height, r * a.sin());
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let target = Vector3::new(0.0, 1.0, 0.0);
    let mut poses = Vec::with_capacity(len);
    for i in 0..len {
        if i > 0 {
            heading += rng.random_range(-0.4..0.4);
            let step = rng.random_range(0.2..0.8) * max_step;
            let mut next = pos + Vector3::new(heading.cos(), 0.0, heading.sin()) * step;
            let rr = next.x.hypot(next.z);
            if !(r_min..=r_max).contains(&rr) {
                // reflect the heading off the ring boundary
                heading += std::f64::consts::PI;
                next = pos + Vector3::new(heading.cos(), 0.0, heading.sin()) * step;
            }
            pos = next;
        }
        poses.push(look_at(pos, target));
    }
    poses
}

fn check(scene: &SceneDescription, poses: &[Pose], p: &TrajectoryParams) -> std::result::Result<(), String> {
    let cam = p.camera.downscaled(4).unwrap_or(p.camera);
    for (i, w) in poses.windows(2).enumerate() {
        let step = (w[1].center() - w[0].center()).norm();
        if step > p.max_step {
            return Err(format!("step {step:.3} between frames {i} and {} exceeds {}", i + 1, p.max_step));
        }
    }
    let mut depth = poses.first().map(|pose| render_depth(scene, pose, &cam));
    for (i, w) in poses.windows(2).enumerate() {
        let d0 = depth.take().expect("depth of the previous frame");
        let score = frustum_overlap_score(DepthView { camera: &cam, pose: &w[0], depth: &d0 }, &[w[1]], &cam);
        if score < p.min_overlap {
            return Err(format!("overlap {score:.3} between frames {i} and {} below {}", i + 1, p.min_overlap));
        }
        depth = Some(render_depth(scene, &w[1], &cam));
    }
    Ok(())
}

/// Generates a camera path through `scene`. Candidates violating the step or
/// consecutive-overlap bounds are resampled up to `max_attempts` times.
pub fn generate_trajectory(
    kind: TrajectoryKind,
    length: usize,
    scene: &SceneDescription,
    seed: u64,
    params: &TrajectoryParams,
) -> Result<Trajectory> {
    if length == 0 {
        return Err(SceneError::InvalidParams("trajectory length must be at least 1".into()));
    }
    if params.max_attempts == 0 {
        return Err(SceneError::InvalidParams("max_attempts must be positive".into()));
    }
    let mut reason = String::new();
    for attempt in 0..params.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(attempt as u64));
        let mut orbit_center = None;
        let poses = match kind {
            TrajectoryKind::Orbit => {
                let (poses, c) = orbit(length, &mut rng, params.max_step);
                orbit_center = Some(c);
                poses
            }
            TrajectoryKind::Dolly => dolly(length, &mut rng, params.max_step),
            TrajectoryKind::Lawnmower => lawnmower(length, &mut rng, params),
            TrajectoryKind::RandomWalk => random_walk(length, &mut rng, params.max_step),
        };
        match check(scene, &poses, params) {
            Ok(()) => return Ok(Trajectory { kind, poses, camera: params.camera, orbit_center }),
            Err(r) => {
                log::debug!("{kind} attempt {attempt} rejected: {r}");
                reason = r;
            }
        }
    }
    Err(SceneError::TrajectoryRejected { kind: kind.to_string(), attempts: params.max_attempts, reason })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneParams};

    #[test]
    fn single_pose() {
        let scene = generate_scene(0, &SceneParams::default()).unwrap();
        for kind in TrajectoryKind::ALL {
            let t = generate_trajectory(kind, 1, &scene, 0, &TrajectoryParams::default()).unwrap();
            assert_eq!(t.len(), 1);
        }
    }

    #[test]
    fn zero_length_rejected() {
        let scene = generate_scene(0, &SceneParams::default()).unwrap();
        assert!(generate_trajectory(TrajectoryKind::Orbit, 0, &scene, 0, &TrajectoryParams::default()).is_err());
    }

    #[test]
    fn impossible_bounds_rejected() {
        let scene = generate_scene(0, &SceneParams::default()).unwrap();
        let p = TrajectoryParams { min_overlap: 1.01, max_attempts: 3, ..Default::default() };
        let err = generate_trajectory(TrajectoryKind::Dolly, 5, &scene, 0, &p).unwrap_err();
        assert!(matches!(err, SceneError::TrajectoryRejected { attempts: 3, .. }));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in TrajectoryKind::ALL {
            assert_eq!(kind.name().parse::<TrajectoryKind>().unwrap(), kind);
        }
    }
}
