//! Single-file checkpoint container.
//!
//! Layout: the 8-byte magic `SGCKPT01`, a little-endian `u64` header length,
//! the JSON header, then every tensor's little-endian bytes in header order.
//! The header lists each group's tensors with their SHA-256 digests and a
//! per-group digest; the content hash covers all group digests. Loading
//! verifies every digest, and re-saving a loaded checkpoint reproduces the
//! file byte for byte.

use std::io::Write;
use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::nn::HostTensor;

const MAGIC: &[u8; 8] = b"SGCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Training stage that produced the checkpoint.
    pub stage: String,
    /// Canonical text of the run configuration.
    pub config: String,
    /// Free-form lineage, e.g. the content hash of the input checkpoint.
    pub parent: Option<String>,
    /// Ablation switches the checkpoint was trained with.
    pub flags: Vec<String>,
    pub groups: Vec<(String, Vec<HostTensor>)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    stage: String,
    config: String,
    parent: Option<String>,
    flags: Vec<String>,
    groups: Vec<GroupEntry>,
    content_hash: String,
}

#[derive(Serialize, Deserialize)]
struct GroupEntry {
    name: String,
    hash: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
    sha256: String,
}

fn ckpt_err(msg: impl Into<String>) -> CoreError {
    CoreError::Checkpoint(msg.into())
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(ckpt_err(format!("unsupported dtype {other:?}"))),
    }
}

fn parse_dtype(s: &str) -> Result<DType> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(ckpt_err(format!("unsupported dtype {other:?}"))),
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a group: its name, then every tensor's name and digest.
fn group_hash(name: &str, tensors: &[TensorEntry]) -> String {
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    for t in tensors {
        h.update([0u8]);
        h.update(t.name.as_bytes());
        h.update([0u8]);
        h.update(t.sha256.as_bytes());
    }
    hex::encode(h.finalize())
}

fn content_hash(groups: &[GroupEntry]) -> String {
    let mut h = Sha256::new();
    for g in groups {
        h.update(g.name.as_bytes());
        h.update([0u8]);
        h.update(g.hash.as_bytes());
    }
    hex::encode(h.finalize())
}

impl Checkpoint {
    fn header(&self) -> Result<Header> {
        let mut offset = 0u64;
        let mut groups = Vec::with_capacity(self.groups.len());
        for (name, tensors) in &self.groups {
            let mut entries = Vec::with_capacity(tensors.len());
            for t in tensors {
                let len = t.bytes.len() as u64;
                entries.push(TensorEntry {
                    name: t.name.clone(),
                    dtype: dtype_name(t.dtype)?.to_string(),
                    shape: t.shape.clone(),
                    offset,
                    len,
                    sha256: sha_hex(&t.bytes),
                });
                offset += len;
            }
            groups.push(GroupEntry { name: name.clone(), hash: group_hash(name, &entries), tensors: entries });
        }
        let content_hash = content_hash(&groups);
        Ok(Header {
            format: 1,
            stage: self.stage.clone(),
            config: self.config.clone(),
            parent: self.parent.clone(),
            flags: self.flags.clone(),
            groups,
            content_hash,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header()?)?;
        let mut out = Vec::with_capacity(16 + header.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, tensors) in &self.groups {
            for t in tensors {
                out.extend_from_slice(&t.bytes);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(ckpt_err("not a checkpoint file (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| ckpt_err("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..body_start])?;
        if header.format != 1 {
            return Err(ckpt_err(format!("unsupported format version {}", header.format)));
        }
        let body = &bytes[body_start..];
        let mut groups = Vec::with_capacity(header.groups.len());
        let mut expected_end = 0u64;
        for g in &header.groups {
            let mut tensors = Vec::with_capacity(g.tensors.len());
            for t in &g.tensors {
                if t.offset != expected_end {
                    return Err(ckpt_err(format!("{}.{}: non-contiguous blob", g.name, t.name)));
                }
                let end = t.offset.checked_add(t.len).filter(|&e| e as usize <= body.len());
                let end = end.ok_or_else(|| ckpt_err(format!("{}.{}: blob out of range", g.name, t.name)))?;
                let blob = &body[t.offset as usize..end as usize];
                if sha_hex(blob) != t.sha256 {
                    return Err(ckpt_err(format!("{}.{}: hash mismatch", g.name, t.name)));
                }
                let dtype = parse_dtype(&t.dtype)?;
                let elems: usize = t.shape.iter().product();
                if elems * dtype.size_in_bytes() != blob.len() {
                    return Err(ckpt_err(format!("{}.{}: size does not match shape", g.name, t.name)));
                }
                tensors.push(HostTensor { name: t.name.clone(), dtype, shape: t.shape.clone(), bytes: blob.to_vec() });
                expected_end = end;
            }
            if group_hash(&g.name, &g.tensors) != g.hash {
                return Err(ckpt_err(format!("group {}: hash mismatch", g.name)));
            }
            groups.push((g.name.clone(), tensors));
        }
        if expected_end as usize != body.len() {
            return Err(ckpt_err("trailing bytes after the last blob"));
        }
        if content_hash(&header.groups) != header.content_hash {
            return Err(ckpt_err("content hash mismatch"));
        }
        Ok(Self { stage: header.stage, config: header.config, parent: header.parent, flags: header.flags, groups })
    }

    /// Writes atomically through a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| ckpt_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn group(&self, name: &str) -> Option<&[HostTensor]> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, t)| t.as_slice())
    }

    pub fn group_hash(&self, name: &str) -> Result<Option<String>> {
        Ok(self.header()?.groups.into_iter().find(|g| g.name == name).map(|g| g.hash))
    }

    pub fn content_hash(&self) -> Result<String> {
        Ok(self.header()?.content_hash)
    }

    /// Group names with their parameter counts and digests.
    pub fn summary(&self) -> Result<Vec<(String, usize, String)>> {
        Ok(self
            .header()?
            .groups
            .into_iter()
            .map(|g| {
                let count = g.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
                (g.name, count, g.hash)
            })
            .collect())
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
