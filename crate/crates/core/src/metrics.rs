//! Photometric and pose metrics, trajectory alignment, and the stand-in pose
//! estimator used to exercise the pose-metric path.

use nalgebra::{DMatrix, DVector, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scenegen_geometry::Pose;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, shape_err, Result};

/// Decibel value whose infinite case serializes as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Db(pub f64);

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() && self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Db {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Db(v)),
            Repr::Str(s) if s == "inf" => Ok(Db(f64::INFINITY)),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("unexpected decibel value {s:?}"))),
        }
    }
}

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(shape_err("image pair", a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.len() as f64)
}

/// `10·log10(1/MSE)` for images in `[0, 1]`; identical images give `+inf`.
pub fn psnr(a: &[f32], b: &[f32]) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows and channels.
/// Images are `height × width × channels`, interleaved, values in `[0, 1]`.
pub fn ssim(a: &[f32], b: &[f32], width: usize, height: usize, channels: usize) -> Result<f64> {
    if a.len() != width * height * channels || b.len() != a.len() {
        return Err(shape_err("ssim images", width * height * channels, (a.len(), b.len())));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(invalid(format!("ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels")));
    }
    let g = gaussian_window();
    let (ow, oh) = (width - SSIM_WINDOW + 1, height - SSIM_WINDOW + 1);
    // separable filtering: rows then columns, five moment maps per channel
    let mut total = 0.0;
    for ch in 0..channels {
        let px = |img: &[f32], x: usize, y: usize| img[(y * width + x) * channels + ch] as f64;
        let mut rows = vec![[0.0f64; 5]; ow * height];
        for y in 0..height {
            for x in 0..ow {
                let mut m = [0.0; 5];
                for (k, gk) in g.iter().enumerate() {
                    let (va, vb) = (px(a, x + k, y), px(b, x + k, y));
                    m[0] += gk * va;
                    m[1] += gk * vb;
                    m[2] += gk * va * va;
                    m[3] += gk * vb * vb;
                    m[4] += gk * va * vb;
                }
                rows[y * ow + x] = m;
            }
        }
        for y in 0..oh {
            for x in 0..ow {
                let mut m = [0.0; 5];
                for (k, gk) in g.iter().enumerate() {
                    let r = rows[(y + k) * ow + x];
                    for j in 0..5 {
                        m[j] += gk * r[j];
                    }
                }
                let [mu_a, mu_b, saa, sbb, sab] = m;
                let var_a = saa - mu_a * mu_a;
                let var_b = sbb - mu_b * mu_b;
                let cov = sab - mu_a * mu_b;
                total += ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
            }
        }
    }
    Ok(total / (ow * oh * channels) as f64)
}

/// Sum of consecutive camera-center distances.
pub fn path_length(poses: &[Pose]) -> f64 {
    poses.windows(2).map(|w| (w[1].translation - w[0].translation).norm()).sum()
}

/// Result of aligning an estimated trajectory to a reference.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub poses: Vec<Pose>,
    /// Rigid transform applied before scaling.
    pub transform: Pose,
    pub scale: f64,
}

/// Moves estimated pose 0 onto reference pose 0, then scales camera centers
/// about the first center so the path lengths agree.
pub fn align_trajectory(estimated: &[Pose], reference: &[Pose]) -> Result<Alignment> {
    if estimated.len() != reference.len() || estimated.len() < 2 {
        return Err(shape_err("trajectory alignment", reference.len(), estimated.len()));
    }
    let transform = reference[0].compose(&estimated[0].inverse());
    let rigid: Vec<Pose> = estimated.iter().map(|p| transform.compose(p)).collect();
    let est_len = path_length(&rigid);
    if !(est_len > 0.0) {
        return Err(invalid("estimated trajectory has zero path length; scale is undefined"));
    }
    let scale = path_length(reference) / est_len;
    let c0 = reference[0].translation;
    let poses = rigid
        .iter()
        .enumerate()
        .map(|(i, p)| Pose {
            rotation: p.rotation,
            translation: if i == 0 { c0 } else { c0 + (p.translation - c0) * scale },
        })
        .collect();
    Ok(Alignment { poses, transform, scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    /// Mean geodesic rotation error, radians.
    pub r_dist: f64,
    /// Mean camera-center error, world units.
    pub t_dist: f64,
}

pub fn pose_metrics(aligned: &[Pose], reference: &[Pose]) -> Result<PoseMetrics> {
    if aligned.len() != reference.len() || aligned.is_empty() {
        return Err(shape_err("pose metrics", reference.len(), aligned.len()));
    }
    let n = aligned.len() as f64;
    let r = aligned.iter().zip(reference).map(|(a, b)| a.rotation_angle_to(b)).sum::<f64>() / n;
    let t = aligned.iter().zip(reference).map(|(a, b)| (a.translation - b.translation).norm()).sum::<f64>() / n;
    Ok(PoseMetrics { r_dist: r, t_dist: t })
}

/// Every tenth frame up to frame 200, truncated to the available frames.
pub fn keyframe_indices(total_frames: usize) -> Vec<usize> {
    if total_frames == 0 {
        return Vec::new();
    }
    let last = (total_frames - 1).min(200);
    (0..=last / 10).map(|i| i * 10).collect()
}

/// Fréchet distance between Gaussian fits of two feature sets, with
/// `1e-6` diagonal loading of both covariances.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = gaussian_fit(a)?;
    let (mb, cb) = gaussian_fit(b)?;
    if ma.len() != mb.len() {
        return Err(shape_err("feature dimension", ma.len(), mb.len()));
    }
    let sa = sym_sqrt(&ca);
    let inner = sym_sqrt(&(&sa * &cb * &sa));
    let trace = (ca.trace() + cb.trace() - 2.0 * inner.trace()).max(0.0);
    Ok((ma - mb).norm_squared() + trace)
}

fn gaussian_fit(x: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = x.first().ok_or_else(|| invalid("empty feature set"))?.len();
    if x.iter().any(|v| v.len() != d) {
        return Err(invalid("ragged feature set"));
    }
    let n = x.len() as f64;
    let mean = x.iter().fold(DVector::zeros(d), |acc, v| acc + DVector::from_column_slice(v)) / n;
    let mut cov = DMatrix::<f64>::identity(d, d) * 1e-6;
    if x.len() > 1 {
        for v in x {
            let c = DVector::from_column_slice(v) - &mean;
            cov += &c * c.transpose() / (n - 1.0);
        }
    }
    Ok((mean, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Stand-in for a learned pose estimator: ground truth perturbed by seeded
/// rotation and translation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimator {
    /// Standard deviation of the rotation angle, radians.
    pub rotation_noise: f64,
    /// Per-axis standard deviation of the camera center, world units.
    pub translation_noise: f64,
    pub seed: u64,
}

impl OracleEstimator {
    pub fn estimate(&self, reference: &[Pose]) -> Vec<Pose> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        reference
            .iter()
            .map(|p| {
                let axis = Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng));
                let angle = gauss(&mut rng) * self.rotation_noise;
                let dt = Vector3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng)) * self.translation_noise;
                let rot = match Unit::try_new(axis, 1e-12) {
                    Some(axis) => Rotation3::from_axis_angle(&axis, angle).into_inner(),
                    None => nalgebra::Matrix3::identity(),
                };
                Pose { rotation: rot * p.rotation, translation: p.translation + dt }
            })
            .collect()
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Per-frame and aggregate photometric metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotometricReport {
    pub psnr: Vec<Db>,
    pub ssim: Vec<f64>,
    pub mean_psnr: Db,
    pub mean_ssim: f64,
}

/// Compares two equally long frame lists of `size × size × 3` images. The
/// mean PSNR is infinite only if every frame pair is identical.
pub fn photometric_report(generated: &[Vec<f32>], reference: &[Vec<f32>], width: usize, height: usize) -> Result<PhotometricReport> {
    if generated.len() != reference.len() || generated.is_empty() {
        return Err(shape_err("frame lists", reference.len(), generated.len()));
    }
    let mut p = Vec::with_capacity(generated.len());
    let mut s = Vec::with_capacity(generated.len());
    for (g, r) in generated.iter().zip(reference) {
        p.push(psnr(g, r)?);
        s.push(ssim(g, r, width, height, 3)?);
    }
    let finite: Vec<f64> = p.iter().copied().filter(|v| v.is_finite()).collect();
    let mean_psnr = if finite.is_empty() { f64::INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 };
    Ok(PhotometricReport {
        psnr: p.into_iter().map(Db).collect(),
        mean_ssim: s.iter().sum::<f64>() / s.len() as f64,
        ssim: s,
        mean_psnr: Db(mean_psnr),
    })
}

/// Mean squared error between the frame-to-frame changes of a generated
/// video and of its reference.
pub fn temporal_discontinuity(generated: &[Vec<f32>], reference: &[Vec<f32>]) -> Result<f64> {
    if generated.len() != reference.len() || generated.len() < 2 {
        return Err(shape_err("frame lists", reference.len(), generated.len()));
    }
    let mut total = 0.0;
    for i in 1..generated.len() {
        let (g0, g1, r0, r1) = (&generated[i - 1], &generated[i], &reference[i - 1], &reference[i]);
        if g0.len() != r0.len() || g1.len() != r1.len() || g0.len() != g1.len() {
            return Err(shape_err("frame sizes", r0.len(), g0.len()));
        }
        let e: f64 = (0..g0.len())
            .map(|k| ((g1[k] - g0[k]) as f64 - (r1[k] - r0[k]) as f64).powi(2))
            .sum::<f64>()
            / g0.len() as f64;
        total += e;
    }
    Ok(total / (generated.len() - 1) as f64)
}

/// Mean MSE against the reference over the listed frames.
pub fn frame_error(generated: &[Vec<f32>], reference: &[Vec<f32>], frames: &[usize]) -> Result<f64> {
    if frames.is_empty() {
        return Err(invalid("no frames to score"));
    }
    let mut total = 0.0;
    for &i in frames {
        let (g, r) = generated
            .get(i)
            .zip(reference.get(i))
            .ok_or_else(|| invalid(format!("frame {i} out of range")))?;
        total += mse(g, r)?;
    }
    Ok(total / frames.len() as f64)
}

/// Frames whose camera comes back near an earlier one: some frame at least
/// `min_gap` steps earlier lies within `max_distance` and `max_angle`
/// radians.
pub fn revisit_frames(poses: &[Pose], min_gap: usize, max_distance: f64, max_angle: f64) -> Vec<usize> {
    (min_gap..poses.len())
        .filter(|&i| {
            poses[..=i - min_gap].iter().any(|p| {
                (p.center() - poses[i].center()).norm() <= max_distance && p.rotation_angle_to(&poses[i]) <= max_angle
            })
        })
        .collect()
}
