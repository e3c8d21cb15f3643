//! Frame directories and pose lists on disk.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use scenegen_core::checkpoint::write_atomic;
use scenegen_geometry::Pose;
use scenegen_scene::{read_image_png, write_image_png};

/// Writes `dir/frames/frame_iii.png` and `dir/poses.json`.
pub fn write_video(dir: &Path, frames: &[Vec<f32>], poses: &[Pose], size: usize) -> Result<()> {
    let fdir = dir.join("frames");
    std::fs::create_dir_all(&fdir)?;
    for (i, f) in frames.iter().enumerate() {
        write_image_png(&fdir.join(format!("frame_{i:03}.png")), size, size, f)?;
    }
    write_json(&dir.join("poses.json"), &poses)
}

/// Frames of `dir/frames` in name order, with their common size.
pub fn read_frames(dir: &Path) -> Result<(Vec<Vec<f32>>, usize, usize)> {
    let fdir = dir.join("frames");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&fdir)
        .with_context(|| format!("cannot list {}", fdir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no frames in {}", fdir.display());
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut size = None;
    for p in &paths {
        let (w, h, img) = read_image_png(p).with_context(|| format!("cannot read {}", p.display()))?;
        if *size.get_or_insert((w, h)) != (w, h) {
            bail!("{} is {w}×{h}, unlike earlier frames", p.display());
        }
        frames.push(img);
    }
    let (w, h) = size.unwrap_or_default();
    Ok((frames, w, h))
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a pose list", path.display()))
}

pub fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}
