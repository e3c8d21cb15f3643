//! Flat `key = value` run configuration with a typed schema.
//!
//! Lines are `key = value`; `#` starts a comment. Every key must belong to
//! the schema and parse as its declared type; unknown keys are errors.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{DenoiserConfig, LossWeights};
use crate::error::{CoreError, Result};
use crate::latent::{AeConfig, CcnConfig};
use crate::recon::LrmConfig;

macro_rules! config_schema {
    ($(#[$meta:meta])* pub struct $name:ident { $($(#[doc = $doc:literal])* $key:literal => $field:ident: $ty:ty = $default:expr,)* }) => {
        $(#[$meta])*
        pub struct $name {
            $($(#[doc = $doc])* pub $field: $ty,)*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { $($field: $default,)* }
            }
        }

        impl $name {
            pub const KEYS: &'static [&'static str] = &[$($key,)*];

            /// Assigns one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$field = value.parse::<$ty>().map_err(|e| {
                            CoreError::Config(format!("{key}: cannot parse {value:?} as {}: {e}", stringify!($ty)))
                        })?;
                    })*
                    _ => return Err(CoreError::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            /// Canonical text form, one line per key in schema order.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(out.push_str(&format!("{} = {}\n", $key, self.$field));)*
                out
            }
        }
    };
}

config_schema! {
    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct RunConfig {
        "model.dtype" => dtype: String = "f32".into(),
        "model.image_size" => image_size: usize = 64,
        "model.window" => window: usize = 13,
        "model.near" => near: f64 = 0.5,
        "model.far" => far: f64 = 20.0,
        "ae.width0" => ae_width0: usize = 32,
        "ae.width1" => ae_width1: usize = 64,
        "ae.width2" => ae_width2: usize = 128,
        "ccn.hidden" => ccn_hidden: usize = 64,
        "lrm.layers" => lrm_layers: usize = 4,
        "lrm.hidden" => lrm_hidden: usize = 128,
        "lrm.heads" => lrm_heads: usize = 4,
        "lrm.mlp" => lrm_mlp: usize = 512,
        "lrm.patch" => lrm_patch: usize = 8,
        "denoiser.blocks" => den_blocks: usize = 4,
        "denoiser.hidden" => den_hidden: usize = 64,
        "denoiser.heads" => den_heads: usize = 4,
        "denoiser.mlp" => den_mlp: usize = 256,
        "denoiser.control_blocks" => den_control_blocks: usize = 2,
        "diffusion.train_steps" => diffusion_steps: usize = 1000,
        "diffusion.sample_steps" => sample_steps: usize = 50,
        "loss.depth" => loss_depth: f64 = 0.05,
        "loss.latent" => loss_latent: f64 = 0.1,
        "loss.diffusion" => loss_diffusion: f64 = 1.0,
        "loss.novel_views" => novel_views: usize = 3,
        "data.scenes" => data_scenes: usize = 4,
        "data.records_per_scene" => data_records: usize = 2,
        "data.record_length" => data_record_length: usize = 37,
        "data.kinds" => data_kinds: String = "orbit,dolly,lawnmower,random-walk".into(),
        "train.weight_decay" => weight_decay: f64 = 0.0,
        "train.grad_clip" => grad_clip: f64 = 1.0,
        "train.warmup" => lr_warmup: usize = 50,
        "train.lr_floor" => lr_floor: f64 = 0.1,
        "train.log_every" => log_every: usize = 50,
        "ae.steps" => ae_steps: usize = 1500,
        "ae.batch" => ae_batch: usize = 8,
        "ae.lr" => ae_lr: f64 = 2e-3,
        "backbone.steps" => backbone_steps: usize = 1500,
        "backbone.batch" => backbone_batch: usize = 1,
        "backbone.lr" => backbone_lr: f64 = 1e-3,
        "stage.warmup_steps" => warmup_steps: usize = 300,
        "stage.intervals_steps" => intervals_steps: usize = 200,
        "stage.joint_steps" => joint_steps: usize = 1500,
        "stage.layout_steps" => layout_steps: usize = 800,
        "stage.lr" => stage_lr: f64 = 1e-3,
        /// Frame spacing multiplier for the interval stage.
        "stage.interval_stride" => interval_stride: usize = 2,
        "eval.rotation_noise" => rotation_noise: f64 = 0.01,
        "eval.translation_noise" => translation_noise: f64 = 0.02,
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Overrides the keys listed in `text`, leaving the others untouched.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(CoreError::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
            self.set(key, value).map_err(|e| CoreError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        self.validate()
    }

    /// Whether models built from both configs have the same parameters.
    pub fn same_architecture(&self, other: &RunConfig) -> bool {
        self.dtype == other.dtype
            && self.image_size == other.image_size
            && self.ae() == other.ae()
            && self.ccn() == other.ccn()
            && self.lrm() == other.lrm()
            && self.denoiser() == other.denoiser()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if !matches!(self.dtype.as_str(), "f32" | "f64") {
            return bad(format!("model.dtype must be f32 or f64, got {:?}", self.dtype));
        }
        if self.image_size % 8 != 0 || self.image_size % self.lrm_patch != 0 {
            return bad(format!("model.image_size {} must be a multiple of 8 and of lrm.patch", self.image_size));
        }
        if self.window % 4 != 1 {
            return bad(format!("model.window {} must be 1 mod 4", self.window));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return bad(format!("invalid depth range {}..{}", self.near, self.far));
        }
        if self.data_record_length % 4 != 1 {
            return bad(format!("data.record_length {} must be 1 mod 4", self.data_record_length));
        }
        LossWeights::new(self.loss_depth, self.loss_latent, self.loss_diffusion)
            .map_err(|e| CoreError::Config(e.to_string()))?;
        self.denoiser().validate().map_err(|e| CoreError::Config(e.to_string()))?;
        if self.lrm_hidden % self.lrm_heads != 0 {
            return bad(format!("lrm.hidden {} not divisible by lrm.heads {}", self.lrm_hidden, self.lrm_heads));
        }
        Ok(())
    }

    pub fn candle_dtype(&self) -> candle_core::DType {
        if self.dtype == "f64" {
            candle_core::DType::F64
        } else {
            candle_core::DType::F32
        }
    }

    pub fn ae(&self) -> AeConfig {
        AeConfig { widths: [self.ae_width0, self.ae_width1, self.ae_width2] }
    }

    pub fn ccn(&self) -> CcnConfig {
        CcnConfig { hidden: self.ccn_hidden }
    }

    pub fn lrm(&self) -> LrmConfig {
        LrmConfig {
            layers: self.lrm_layers,
            hidden: self.lrm_hidden,
            heads: self.lrm_heads,
            mlp: self.lrm_mlp,
            patch: self.lrm_patch,
        }
    }

    pub fn denoiser(&self) -> DenoiserConfig {
        let g = self.image_size / 8;
        DenoiserConfig {
            blocks: self.den_blocks,
            hidden: self.den_hidden,
            heads: self.den_heads,
            mlp: self.den_mlp,
            control_blocks: self.den_control_blocks,
            grid: g * g,
            schedule_steps: self.diffusion_steps,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { depth: self.loss_depth, latent: self.loss_latent, diffusion: self.loss_diffusion }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut cfg = RunConfig::default();
        cfg.set("lrm.layers", "2").unwrap();
        cfg.set("model.near", "0.25").unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::KEYS.len(), cfg.to_text().lines().count());
    }

    #[test]
    fn rejects_unknown_and_mistyped() {
        assert!(RunConfig::parse("lrm.layerz = 2").is_err());
        assert!(RunConfig::parse("lrm.layers = two").is_err());
        assert!(RunConfig::parse("model.window = 12").is_err());
        assert!(RunConfig::parse("lrm.layers = 2\nlrm.layers = 3").is_err());
        let cfg = RunConfig::parse("# comment\n\nlrm.layers = 2  # inline\n").unwrap();
        assert_eq!(cfg.lrm_layers, 2);
    }
}
