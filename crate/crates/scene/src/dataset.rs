use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use scenegen_geometry::{CameraModel, Pose};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SceneError};
use crate::frame::PosedFrame;
use crate::mono::{mono_depth_stub, MonoDepthParams};
use crate::render::render_view;
use crate::scene::{generate_scene, SceneDescription, SceneParams};
use crate::trajectory::{generate_trajectory, TrajectoryKind, TrajectoryParams};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub seed: u64,
    pub scenes: usize,
    /// Records generated per scene, cycling through `kinds`.
    pub records_per_scene: usize,
    /// Frames per record; must be ≡ 1 (mod 4).
    pub record_length: usize,
    pub kinds: Vec<TrajectoryKind>,
    pub scene: SceneParams,
    pub trajectory: TrajectoryParams,
    pub mono: MonoDepthParams,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 4,
            records_per_scene: 2,
            record_length: 37,
            kinds: TrajectoryKind::ALL.to_vec(),
            scene: SceneParams::default(),
            trajectory: TrajectoryParams::default(),
            mono: MonoDepthParams::default(),
        }
    }
}

impl DatasetParams {
    pub fn validate(&self) -> Result<()> {
        if self.record_length == 0 || self.record_length % 4 != 1 {
            return Err(SceneError::InvalidParams(format!(
                "record length {} is not 1 mod 4",
                self.record_length
            )));
        }
        if self.scenes == 0 || self.records_per_scene == 0 || self.kinds.is_empty() {
            return Err(SceneError::InvalidParams("dataset would be empty".into()));
        }
        Ok(())
    }
}

/// One posed sequence with its ground truth and stub mono depths.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub name: String,
    pub scene: SceneDescription,
    pub kind: TrajectoryKind,
    pub frames: Vec<PosedFrame>,
    pub mono: Vec<Vec<f64>>,
}

impl ClipRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.pose).collect()
    }

    pub fn camera(&self) -> CameraModel {
        self.frames[0].camera
    }
}

/// Derived per-frame seed for the mono-depth stub.
pub fn mono_seed(scene_seed: u64, record: usize, frame: usize) -> u64 {
    scene_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((record as u64) << 20)
        .wrapping_add(frame as u64)
}

pub fn generate_dataset(params: &DatasetParams) -> Result<Vec<ClipRecord>> {
    params.validate()?;
    let mut records = Vec::with_capacity(params.scenes * params.records_per_scene);
    for s in 0..params.scenes {
        let scene_seed = params.seed.wrapping_add(s as u64);
        let scene = generate_scene(scene_seed, &params.scene)?;
        for r in 0..params.records_per_scene {
            let index = records.len();
            let kind = params.kinds[(s + r) % params.kinds.len()];
            let traj = generate_trajectory(kind, params.record_length, &scene, scene_seed ^ ((r as u64) << 32), &params.trajectory)?;
            let frames: Vec<PosedFrame> = traj.poses.iter().map(|p| render_view(&scene, p, &traj.camera)).collect();
            let mono = frames
                .iter()
                .enumerate()
                .map(|(i, f)| mono_depth_stub(f, mono_seed(scene_seed, r, i), &params.mono))
                .collect::<Result<Vec<_>>>()?;
            log::info!("record {index}: scene {scene_seed}, {kind}, {} frames", frames.len());
            records.push(ClipRecord { name: format!("record_{index:04}"), scene: scene.clone(), kind, frames, mono });
        }
    }
    Ok(records)
}

/// Header of a flat binary array file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub dtype: String,
    pub shape: Vec<usize>,
}

fn write_array(path: &Path, dtype: &str, shape: &[usize], bytes: &[u8]) -> Result<()> {
    let header = serde_json::to_string(&ArrayHeader { dtype: dtype.into(), shape: shape.to_vec() })?;
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(header.as_bytes())?;
    f.write_all(b"\n")?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

fn read_array(path: &Path, dtype: &str, elem: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: ArrayHeader = serde_json::from_str(line.trim_end())?;
    if header.dtype != dtype {
        return Err(SceneError::Format(format!("{}: dtype {} (expected {dtype})", path.display(), header.dtype)));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let count: usize = header.shape.iter().product();
    if bytes.len() != count * elem {
        return Err(SceneError::Format(format!(
            "{}: {} data bytes for shape {:?}",
            path.display(),
            bytes.len(),
            header.shape
        )));
    }
    Ok((header.shape, bytes))
}

pub fn write_array_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(SceneError::Format(format!("shape {shape:?} does not match {} values", data.len())));
    }
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_array(path, "f32", shape, &bytes)
}

pub fn read_array_f32(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let (shape, bytes) = read_array(path, "f32", 4)?;
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((shape, data))
}

pub fn write_array_u8(path: &Path, shape: &[usize], data: &[u8]) -> Result<()> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(SceneError::Format(format!("shape {shape:?} does not match {} values", data.len())));
    }
    write_array(path, "u8", shape, data)
}

pub fn read_array_u8(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    read_array(path, "u8", 1)
}

/// Writes an `H×W×3` image in `[0, 1]` as 8-bit RGB PNG.
pub fn write_image_png(path: &Path, width: usize, height: usize, rgb: &[f32]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(SceneError::Format(format!("{} values for a {width}×{height} image", rgb.len())));
    }
    let bytes: Vec<u8> = rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::save_buffer(path, &bytes, width as u32, height as u32, image::ExtendedColorType::Rgb8)?;
    Ok(())
}

/// Reads an 8-bit RGB PNG into `[0, 1]` floats; returns `(width, height, data)`.
pub fn read_image_png(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub params: DatasetParams,
    pub records: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClipMeta {
    name: String,
    kind: TrajectoryKind,
    frames: usize,
    camera: CameraModel,
    poses: Vec<Pose>,
    scene: SceneDescription,
}

/// Writes `dataset.json` plus one directory per record.
pub fn write_dataset(dir: &Path, params: &DatasetParams, records: &[ClipRecord]) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    for rec in records {
        let rdir = dir.join(&rec.name);
        fs::create_dir_all(&rdir)?;
        let cam = rec.camera();
        let (h, w) = (cam.height, cam.width);
        let n = rec.len();
        let mut depth = Vec::with_capacity(n * h * w);
        let mut semantic = Vec::with_capacity(n * h * w);
        for (i, f) in rec.frames.iter().enumerate() {
            write_image_png(&rdir.join(format!("frame_{i:03}.png")), w, h, &f.image)?;
            depth.extend(f.depth.as_ref().ok_or(SceneError::MissingDepth)?.iter().map(|&d| d as f32));
            semantic.extend_from_slice(f.semantic.as_ref().ok_or_else(|| SceneError::Format("missing semantics".into()))?);
        }
        let mono: Vec<f32> = rec.mono.iter().flatten().map(|&d| d as f32).collect();
        write_array_f32(&rdir.join("depth.arr"), &[n, h, w], &depth)?;
        write_array_f32(&rdir.join("mono_depth.arr"), &[n, h, w], &mono)?;
        write_array_u8(&rdir.join("semantic.arr"), &[n, h, w], &semantic)?;
        let meta = ClipMeta {
            name: rec.name.clone(),
            kind: rec.kind,
            frames: n,
            camera: cam,
            poses: rec.poses(),
            scene: rec.scene.clone(),
        };
        fs::write(rdir.join("clip.json"), serde_json::to_string_pretty(&meta)?)?;
    }
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        params: params.clone(),
        records: records.iter().map(|r| r.name.clone()).collect(),
    };
    fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn check_shape(what: &str, shape: &[usize], expected: &[usize]) -> Result<()> {
    if shape != expected {
        return Err(SceneError::Format(format!("{what}: shape {shape:?}, expected {expected:?}")));
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]. Images come back quantized
/// to 8 bits and depths to `f32` precision.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<ClipRecord>)> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("dataset.json"))?)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(SceneError::Format(format!("unsupported format version {}", manifest.format_version)));
    }
    let mut records = Vec::with_capacity(manifest.records.len());
    for name in &manifest.records {
        let rdir = dir.join(name);
        let meta: ClipMeta = serde_json::from_str(&fs::read_to_string(rdir.join("clip.json"))?)?;
        let (n, h, w) = (meta.frames, meta.camera.height, meta.camera.width);
        if meta.poses.len() != n {
            return Err(SceneError::Format(format!("{name}: {} poses for {n} frames", meta.poses.len())));
        }
        let (ds, depth) = read_array_f32(&rdir.join("depth.arr"))?;
        check_shape("depth", &ds, &[n, h, w])?;
        let (ms, mono) = read_array_f32(&rdir.join("mono_depth.arr"))?;
        check_shape("mono_depth", &ms, &[n, h, w])?;
        let (ss, semantic) = read_array_u8(&rdir.join("semantic.arr"))?;
        check_shape("semantic", &ss, &[n, h, w])?;
        let hw = h * w;
        let mut frames = Vec::with_capacity(n);
        let mut monos = Vec::with_capacity(n);
        for i in 0..n {
            let (iw, ih, image) = read_image_png(&rdir.join(format!("frame_{i:03}.png")))?;
            if (iw, ih) != (w, h) {
                return Err(SceneError::Format(format!("{name}: frame {i} is {iw}×{ih}")));
            }
            frames.push(PosedFrame {
                image,
                depth: Some(depth[i * hw..(i + 1) * hw].iter().map(|&d| d as f64).collect()),
                semantic: Some(semantic[i * hw..(i + 1) * hw].to_vec()),
                pose: meta.poses[i],
                camera: meta.camera,
            });
            monos.push(mono[i * hw..(i + 1) * hw].iter().map(|&d| d as f64).collect());
        }
        records.push(ClipRecord { name: meta.name, scene: meta.scene, kind: meta.kind, frames, mono: monos });
    }
    Ok((manifest, records))
}
