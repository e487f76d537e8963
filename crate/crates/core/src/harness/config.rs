//! Training configuration and the line-based `key = value` format.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::framegen::FrameGenConfig;
use crate::latentcodec::CodecConfig;
use crate::lipexpert::ExpertConfig;
use crate::motiongen::MotionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Expert,
    Motion,
    Codec,
    Unet,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Expert => "expert",
            Stage::Motion => "motion",
            Stage::Codec => "codec",
            Stage::Unet => "unet",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(Stage::Expert),
            "motion" => Ok(Stage::Motion),
            "codec" => Ok(Stage::Codec),
            "unet" => Ok(Stage::Unet),
            _ => Err(Error::Config(format!("unknown stage {s:?}"))),
        }
    }
}

/// Parsed `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    parse_key_values(&std::fs::read_to_string(path)?)
}

pub fn format_key_values(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

pub(crate) fn lookup<T: FromStr>(pairs: &[(String, String)], key: &str) -> Result<T> {
    let v = pairs
        .iter()
        .rev()
        .find(|(k, _)| k == key)
        .ok_or_else(|| Error::Config(format!("missing key {key}")))?;
    parse_value(key, &v.1)
}

/// Architecture sizes shared by every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDims {
    pub vertices: usize,
    pub id_dim: usize,
    pub exp_dim: usize,
    pub mouth_fraction: f64,
    pub basis_seed: u64,
    pub audio_bands: usize,
    pub frame_size: usize,
    pub motion_width: usize,
    pub motion_heads: usize,
    pub motion_layers: usize,
    /// Alignment window radius `k`.
    pub motion_window: usize,
    pub expert_window: usize,
    pub expert_hidden: usize,
    pub expert_embed: usize,
    pub expert_mouth_scale: f64,
    pub codec_latent: usize,
    pub codec_stages: usize,
    pub codec_channels: usize,
    pub unet_channels: usize,
    pub unet_context: usize,
    pub unet_heads: usize,
    pub unet_groups: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            vertices: 64,
            id_dim: 8,
            exp_dim: 16,
            mouth_fraction: 0.25,
            basis_seed: 7,
            audio_bands: crate::audiofeat::DEFAULT_BANDS,
            frame_size: 32,
            motion_width: 32,
            motion_heads: 4,
            motion_layers: 2,
            motion_window: crate::motiongen::DEFAULT_WINDOW,
            expert_window: crate::lipexpert::DEFAULT_WINDOW,
            expert_hidden: 64,
            expert_embed: crate::lipexpert::DEFAULT_EMBED,
            expert_mouth_scale: 10.0,
            codec_latent: 8,
            codec_stages: 2,
            codec_channels: 16,
            unet_channels: 32,
            unet_context: 32,
            unet_heads: 4,
            unet_groups: 8,
        }
    }
}

/// Every adjustable field, as `(key, value)` text.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lambda_exp: f64,
    pub lambda_pose: f64,
    pub lambda_sync: f64,
    pub lambda_rec: f64,
    pub lambda_per: f64,
    pub timesteps: usize,
    pub inference_steps: usize,
    pub frames: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub single_transformer: bool,
    pub concat_unet_conditions: bool,
    pub no_alignment_mask: bool,
    pub no_sync_loss: bool,
    /// Stage two trains on ground-truth coefficients instead of stage-one samples.
    pub teacher_forcing: bool,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Motion,
            lambda_exp: 1.0,
            lambda_pose: 1.0,
            lambda_sync: 0.1,
            lambda_rec: crate::latentcodec::DEFAULT_REC_WEIGHT,
            lambda_per: crate::latentcodec::DEFAULT_PER_WEIGHT,
            timesteps: crate::diffcore::DEFAULT_TIMESTEPS,
            inference_steps: crate::diffcore::DEFAULT_INFERENCE_STEPS,
            frames: 25,
            batch_size: 8,
            learning_rate: 1e-4,
            epochs: 1,
            seed: 0,
            single_transformer: false,
            concat_unet_conditions: false,
            no_alignment_mask: false,
            no_sync_loss: false,
            teacher_forcing: true,
            dims: ModelDims::default(),
        }
    }
}

macro_rules! config_fields {
    ($($name:ident),* $(;)? $(dims: $($dim:ident),*)?) => {
        impl TrainConfig {
            /// Sets one field from its textual key and value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    "stage" => self.stage = value.parse()?,
                    $(stringify!($name) => self.$name = parse_value(key, value)?,)*
                    $($(stringify!($dim) => self.dims.$dim = parse_value(key, value)?,)*)?
                    _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
                }
                Ok(())
            }

            pub fn to_key_values(&self) -> Vec<(String, String)> {
                let mut out = vec![("stage".to_string(), self.stage.as_str().to_string())];
                $(out.push((stringify!($name).to_string(), self.$name.to_string()));)*
                $($(out.push((stringify!($dim).to_string(), self.dims.$dim.to_string()));)*)?
                out
            }
        }
    };
}

config_fields!(
    lambda_exp, lambda_pose, lambda_sync, lambda_rec, lambda_per, timesteps, inference_steps, frames,
    batch_size, learning_rate, epochs, seed, single_transformer, concat_unet_conditions,
    no_alignment_mask, no_sync_loss, teacher_forcing;
    dims: vertices, id_dim, exp_dim, mouth_fraction, basis_seed, audio_bands, frame_size, motion_width,
    motion_heads, motion_layers, motion_window, expert_window, expert_hidden, expert_embed,
    expert_mouth_scale, codec_latent, codec_stages, codec_channels, unet_channels, unet_context,
    unet_heads, unet_groups
);

impl TrainConfig {
    pub fn from_key_values(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_key_values(&read_key_values(path)?)
    }

    pub fn to_text(&self) -> String {
        format_key_values(&self.to_key_values())
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_exp, self.lambda_pose, self.lambda_sync, self.lambda_rec, self.lambda_per];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if self.frames == 0 || self.batch_size == 0 || self.timesteps == 0 || self.inference_steps == 0 {
            return Err(Error::Config("frames, batch size, timesteps and inference steps must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Sync weight after applying the `no_sync_loss` flag.
    pub fn effective_lambda_sync(&self) -> f64 {
        if self.no_sync_loss {
            0.0
        } else {
            self.lambda_sync
        }
    }

    pub fn mouth_dim(&self) -> usize {
        3 * (self.dims.mouth_fraction * self.dims.vertices as f64).ceil() as usize
    }

    fn motion_config(&self, coeff_dim: usize) -> MotionConfig {
        let d = &self.dims;
        MotionConfig {
            width: d.motion_width,
            heads: d.motion_heads,
            layers: d.motion_layers,
            window: if self.no_alignment_mask { None } else { Some(d.motion_window) },
            ..MotionConfig::new(coeff_dim, d.audio_bands)
        }
    }

    pub fn expression_config(&self) -> MotionConfig {
        self.motion_config(self.dims.exp_dim)
    }

    pub fn pose_config(&self) -> MotionConfig {
        self.motion_config(crate::face3d::POSE_DIM)
    }

    pub fn joint_config(&self) -> MotionConfig {
        self.motion_config(self.dims.exp_dim + crate::face3d::POSE_DIM)
    }

    pub fn expert_config(&self) -> ExpertConfig {
        let d = &self.dims;
        ExpertConfig {
            window: d.expert_window,
            hidden: d.expert_hidden,
            embed: d.expert_embed,
            mouth_scale: d.expert_mouth_scale,
            ..ExpertConfig::new(self.mouth_dim(), d.audio_bands)
        }
    }

    pub fn codec_config(&self) -> CodecConfig {
        let d = &self.dims;
        CodecConfig { latent_channels: d.codec_latent, stages: d.codec_stages, channels: d.codec_channels }
    }

    pub fn framegen_config(&self) -> FrameGenConfig {
        let d = &self.dims;
        FrameGenConfig {
            channels: d.unet_channels,
            context_dim: d.unet_context,
            heads: d.unet_heads,
            groups: d.unet_groups,
            concat_conditions: self.concat_unet_conditions,
            ..FrameGenConfig::new(d.codec_latent, d.exp_dim, crate::face3d::POSE_DIM)
        }
    }
}
