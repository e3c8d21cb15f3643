use scenegen_geometry::{CameraModel, Pose, Vector3, DEFAULT_FAR};

use crate::frame::PosedFrame;
use crate::scene::{BoxPrimitive, SceneDescription, SemanticClass, GROUND_HALF_SIZE, SHADE_MAX, SHADE_MIN};
use crate::trajectory::Trajectory;

/// Nearest intersection of a ray with the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Ray parameter; equals z-depth when the ray direction has unit z in
    /// the camera frame.
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub class: SemanticClass,
    /// Index into `scene.boxes`, or `None` for the ground plane.
    pub primitive: Option<usize>,
}

/// Per-pose depth and semantic maps of a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutMaps {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub semantic: Vec<u8>,
}

fn light_dir() -> Vector3<f64> {
    Vector3::new(0.35, 0.85, 0.4).normalize()
}

/// Slab test; returns the entry parameter and the outward normal of the
/// entry face.
fn intersect_box(b: &BoxPrimitive, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < b.min[a] || o[a] > b.max[a] {
                return None;
            }
            continue;
        }
        let t0 = (b.min[a] - o[a]) / d[a];
        let t1 = (b.max[a] - o[a]) / d[a];
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        if lo > t_near {
            t_near = lo;
            axis = a;
        }
        t_far = t_far.min(hi);
    }
    if t_near > t_far || t_near <= 0.0 {
        return None;
    }
    let mut n = Vector3::zeros();
    n[axis] = -d[axis].signum();
    Some((t_near, n))
}

/// Nearest hit along `o + t·d` for `t > 0` against the boxes and the
/// finite ground square.
pub fn intersect_scene(scene: &SceneDescription, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    if d.y != 0.0 {
        let t = -o.y / d.y;
        if t > 0.0 {
            let p = o + d * t;
            if p.x.abs() <= GROUND_HALF_SIZE && p.z.abs() <= GROUND_HALF_SIZE {
                best = Some(RayHit {
                    t,
                    point: Vector3::new(p.x, 0.0, p.z),
                    normal: Vector3::new(0.0, o.y.signum(), 0.0),
                    class: SemanticClass::Ground,
                    primitive: None,
                });
            }
        }
    }
    for (i, b) in scene.boxes.iter().enumerate() {
        if let Some((t, normal)) = intersect_box(b, o, d) {
            if best.as_ref().map_or(true, |h| t < h.t) {
                let class = if b.class == SemanticClass::Building && normal.y > 0.5 {
                    SemanticClass::Roof
                } else {
                    b.class
                };
                best = Some(RayHit { t, point: o + d * t, normal, class, primitive: Some(i) });
            }
        }
    }
    best
}

fn checker(a: f64, b: f64, period: f64) -> f64 {
    let s = (a / period).floor() as i64 + (b / period).floor() as i64;
    if s.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

fn shade(scene: &SceneDescription, hit: &RayHit) -> [f32; 3] {
    let base = hit.class.palette_color();
    let tint = hit.primitive.map(|i| scene.boxes[i].tint).unwrap_or([1.0; 3]);
    let texture = match (hit.class, hit.primitive) {
        (SemanticClass::Ground, _) => 0.06 * checker(hit.point.x, hit.point.z, 1.5),
        (SemanticClass::Building, Some(i)) => {
            let band = (hit.point.y / scene.boxes[i].band_period).floor() as i64;
            if band.rem_euclid(2) == 0 {
                0.05
            } else {
                -0.05
            }
        }
        (SemanticClass::Obstacle, _) => 0.03 * checker(hit.point.x + hit.point.y, hit.point.z, 0.5),
        _ => 0.0,
    };
    let lambert = (SHADE_MIN + (SHADE_MAX - SHADE_MIN) * hit.normal.dot(&light_dir()).max(0.0) as f32) as f64;
    let mut rgb = [0f32; 3];
    for c in 0..3 {
        let v = (base[c] * tint[c]) as f64 * lambert + texture;
        rgb[c] = v.clamp(0.0, 1.0) as f32;
    }
    rgb
}

fn world_ray(camera: &CameraModel, pose: &Pose, x: f64, y: f64) -> Vector3<f64> {
    pose.rotation * camera.direction_through(x, y)
}

fn cast(scene: &SceneDescription, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<RayHit> {
    intersect_scene(scene, o, d).filter(|h| h.t < DEFAULT_FAR)
}

/// Ray-casts the scene. Depth is z-depth of the center ray (`DEFAULT_FAR` for
/// sky), semantics come from the center ray, and RGB is 2×2 supersampled.
pub fn render_view(scene: &SceneDescription, pose: &Pose, camera: &CameraModel) -> PosedFrame {
    let (w, h) = (camera.width, camera.height);
    let o = pose.translation;
    let sky = SemanticClass::Sky.palette_color();
    let mut image = vec![0f32; w * h * 3];
    let mut depth = vec![DEFAULT_FAR; w * h];
    let mut semantic = vec![SemanticClass::Sky.id(); w * h];
    for v in 0..h {
        for u in 0..w {
            let idx = v * w + u;
            let center = world_ray(camera, pose, u as f64 + 0.5, v as f64 + 0.5);
            if let Some(hit) = cast(scene, &o, &center) {
                depth[idx] = hit.t;
                semantic[idx] = hit.class.id();
            }
            let mut acc = [0f32; 3];
            for (sx, sy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let d = world_ray(camera, pose, u as f64 + sx, v as f64 + sy);
                let rgb = cast(scene, &o, &d).map(|hit| shade(scene, &hit)).unwrap_or(sky);
                for c in 0..3 {
                    acc[c] += rgb[c] * 0.25;
                }
            }
            for c in 0..3 {
                image[idx * 3 + c] = acc[c].clamp(0.0, 1.0);
            }
        }
    }
    PosedFrame { image, depth: Some(depth), semantic: Some(semantic), pose: *pose, camera: *camera }
}

pub fn render_layout_maps(scene: &SceneDescription, trajectory: &Trajectory) -> Vec<LayoutMaps> {
    trajectory
        .poses
        .iter()
        .map(|pose| {
            let f = render_view(scene, pose, &trajectory.camera);
            LayoutMaps {
                width: f.width(),
                height: f.height(),
                depth: f.depth.expect("render_view always fills depth"),
                semantic: f.semantic.expect("render_view always fills semantics"),
            }
        })
        .collect()
}
