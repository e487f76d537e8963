//! Model directories, end-to-end generation, evaluation reports and
//! ablation runs.
//!
//! A model root holds one checkpoint directory per stage (`expert/`,
//! `motion/`, `codec/`, `unet/`), each with the `config.txt` it was trained
//! under. A generated video is a directory of `frame_XXXX.ppm` files plus
//! `manifest.txt`, the sampled coefficient files and `report.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::checkpoint::{self, load_checkpoint, save_checkpoint};
use super::coeffio;
use super::config::{lookup, parse_key_values, TrainConfig};
use super::corpus::{corpus_basis, frame_path, SyntheticCorpus};
use super::train::{self, SyncTerm};
use crate::audiofeat::{self, AudioFeatureSequence};
use crate::error::{ensure, Error, Result};
use crate::face3d::{self, FaceBasis};
use crate::framegen::{self, FrameNet};
use crate::latentcodec::{self, Codec, Frame, RandomConvPyramid};
use crate::lipexpert::SyncExpert;
use crate::metrics;
use crate::motiongen::{self, CoeffSequence, MotionModel, MotionNet};
use crate::nn::ParamStore;
use crate::tensor::derive_seed;
use crate::FPS;

pub const EXPERT_DIR: &str = "expert";
pub const MOTION_DIR: &str = "motion";
pub const CODEC_DIR: &str = "codec";
pub const UNET_DIR: &str = "unet";
pub const VIDEO_MANIFEST: &str = "manifest.txt";
pub const REPORT: &str = "report.txt";
pub const REPORT_CSV: &str = "metrics.csv";
pub const EXPRESSION_FILE: &str = "expression.coef";
pub const POSE_FILE: &str = "pose.coef";

const MOTION_STREAM: u64 = 10;
const FRAME_STREAM: u64 = 11;

// ---------------------------------------------------------------- persistence

fn save_stage(dir: &Path, params: &ParamStore, cfg: &TrainConfig) -> Result<()> {
    save_checkpoint(params, dir)?;
    checkpoint::save_config(dir, &cfg.to_key_values())
}

fn load_stage(dir: &Path) -> Result<(ParamStore, TrainConfig)> {
    let cfg = TrainConfig::from_key_values(&checkpoint::load_config(dir)?)?;
    Ok((load_checkpoint(dir)?, cfg))
}

pub fn save_expert(root: &Path, expert: &SyncExpert, cfg: &TrainConfig) -> Result<()> {
    save_stage(&root.join(EXPERT_DIR), &expert.params, cfg)
}

pub fn load_expert(root: &Path) -> Result<(SyncExpert, TrainConfig)> {
    let (params, cfg) = load_stage(&root.join(EXPERT_DIR))?;
    Ok((SyncExpert::from_params(cfg.expert_config(), params)?, cfg))
}

/// Decoupled models store `expression.*` and `pose.*`; the joint arm stores `joint.*`.
pub fn save_motion(root: &Path, model: &MotionModel, cfg: &TrainConfig) -> Result<()> {
    let mut all = ParamStore::new();
    match model {
        MotionModel::Decoupled { expression, pose } => {
            checkpoint::merge_prefixed(&mut all, "expression", &expression.params)?;
            checkpoint::merge_prefixed(&mut all, "pose", &pose.params)?;
        }
        MotionModel::Joint { net, .. } => checkpoint::merge_prefixed(&mut all, "joint", &net.params)?,
    }
    save_stage(&root.join(MOTION_DIR), &all, cfg)
}

pub fn load_motion(root: &Path) -> Result<(MotionModel, TrainConfig)> {
    let (params, cfg) = load_stage(&root.join(MOTION_DIR))?;
    let model = if cfg.single_transformer {
        MotionModel::Joint {
            net: MotionNet::from_params(cfg.joint_config(), checkpoint::split_prefix(&params, "joint")?)?,
            exp_dim: cfg.dims.exp_dim,
        }
    } else {
        MotionModel::Decoupled {
            expression: MotionNet::from_params(cfg.expression_config(), checkpoint::split_prefix(&params, "expression")?)?,
            pose: MotionNet::from_params(cfg.pose_config(), checkpoint::split_prefix(&params, "pose")?)?,
        }
    };
    Ok((model, cfg))
}

pub fn save_codec(root: &Path, codec: &Codec, cfg: &TrainConfig) -> Result<()> {
    save_stage(&root.join(CODEC_DIR), &codec.params, cfg)
}

pub fn load_codec(root: &Path) -> Result<(Codec, TrainConfig)> {
    let (params, cfg) = load_stage(&root.join(CODEC_DIR))?;
    Ok((Codec::from_params(cfg.codec_config(), params)?, cfg))
}

pub fn save_unet(root: &Path, net: &FrameNet, cfg: &TrainConfig) -> Result<()> {
    save_stage(&root.join(UNET_DIR), &net.params, cfg)
}

pub fn load_unet(root: &Path) -> Result<(FrameNet, TrainConfig)> {
    let (params, cfg) = load_stage(&root.join(UNET_DIR))?;
    Ok((FrameNet::from_params(cfg.framegen_config(), params)?, cfg))
}

/// Everything generation needs, with the configuration each stage was trained under.
pub struct Models {
    pub motion: (MotionModel, TrainConfig),
    pub codec: (Codec, TrainConfig),
    pub unet: (FrameNet, TrainConfig),
    /// Optional; only used to score lip sync in reports.
    pub expert: Option<(SyncExpert, TrainConfig)>,
}

impl Models {
    pub fn load(root: &Path) -> Result<Self> {
        let expert = if root.join(EXPERT_DIR).join(checkpoint::MANIFEST).exists() {
            Some(load_expert(root)?)
        } else {
            None
        };
        let models = Models { motion: load_motion(root)?, codec: load_codec(root)?, unet: load_unet(root)?, expert };
        models.check_dims()?;
        Ok(models)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        save_motion(root, &self.motion.0, &self.motion.1)?;
        save_codec(root, &self.codec.0, &self.codec.1)?;
        save_unet(root, &self.unet.0, &self.unet.1)?;
        if let Some((e, c)) = &self.expert {
            save_expert(root, e, c)?;
        }
        Ok(())
    }

    fn check_dims(&self) -> Result<()> {
        let d = &self.motion.1.dims;
        let same = |other: &TrainConfig, what: &str| -> Result<()> {
            let o = &other.dims;
            if (o.exp_dim, o.audio_bands, o.codec_latent, o.frame_size) != (d.exp_dim, d.audio_bands, d.codec_latent, d.frame_size) {
                return Err(Error::Config(format!("{what} dimensions disagree with the motion model")));
            }
            Ok(())
        };
        same(&self.codec.1, "codec")?;
        same(&self.unet.1, "frame denoiser")?;
        if let Some((_, c)) = &self.expert {
            same(c, "sync scorer")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- reports

/// Ordered `metric = value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, f64)>,
}

impl Report {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|e| e.1)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().fold(String::new(), |mut s, (n, v)| {
            let _ = writeln!(s, "{n} = {v}");
            s
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (n, v) in &self.entries {
            let _ = writeln!(s, "\"{n}\",{v}");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(REPORT), self.to_text())?;
        fs::write(dir.join(REPORT_CSV), self.to_csv())?;
        Ok(())
    }
}

/// Mean scorer probability of generated expressions against the audio.
pub fn sync_score(expert: &SyncExpert, basis: &FaceBasis, betas: &CoeffSequence, audio: &AudioFeatureSequence) -> Result<f64> {
    let mouth = face3d::mouth_displacement_sequence(basis, &betas.values)?;
    expert.score(&mouth, &audio.normalized()?)
}

fn motion_metrics(report: &mut Report, audio_beats: &[usize], poses: &CoeffSequence) -> Result<()> {
    let beats = metrics::detect_motion_beats(poses)?;
    report.push("audio_beats", audio_beats.len() as f64);
    report.push("motion_beats", beats.len() as f64);
    report.push("beat_align", metrics::beat_align(audio_beats, &beats, metrics::BEAT_SIGMA)?);
    report.push("pose_diversity", metrics::motion_diversity(std::slice::from_ref(poses))?);
    Ok(())
}

fn frame_metrics(report: &mut Report, generated: &[Frame], truth: &[Frame]) -> Result<()> {
    ensure!(generated.len() == truth.len(), "{} generated frames against {} reference frames", generated.len(), truth.len());
    let n = generated.len() as f64;
    let mut psnr = 0.0;
    let mut ssim = 0.0;
    for (g, t) in generated.iter().zip(truth) {
        psnr += metrics::psnr(g, t)?;
        ssim += metrics::ssim(g, t)?;
    }
    report.push("psnr", psnr / n);
    report.push("ssim", ssim / n);
    if generated.len() >= 2 {
        report.push(metrics::FD_LABEL, metrics::frame_set_distance(generated, truth, &RandomConvPyramid::default())?);
    }
    Ok(())
}

// ---------------------------------------------------------------- generation

#[derive(Debug, Clone)]
pub struct GeneratedVideo {
    pub frames: Vec<Frame>,
    pub betas: CoeffSequence,
    pub poses: CoeffSequence,
    pub report: Report,
}

/// Samples coefficients for `audio`, then one frame per coefficient row.
pub fn generate_video(models: &Models, audio: &AudioFeatureSequence, audio_beats: &[usize], reference: &Frame, seed: u64) -> Result<GeneratedVideo> {
    let (motion, mcfg) = &models.motion;
    let (net, ucfg) = &models.unet;
    let (betas, poses) = motiongen::generate_motion(
        audio,
        motion,
        &train::schedule_for(mcfg)?,
        mcfg.inference_steps,
        derive_seed(seed, MOTION_STREAM),
    )?;
    let frames = framegen::generate_frames_parallel(
        &betas,
        &poses,
        reference,
        &net.denoiser,
        &models.codec.0,
        &train::schedule_for(ucfg)?,
        ucfg.inference_steps,
        derive_seed(seed, FRAME_STREAM),
    )?;
    let mut report = Report::default();
    report.push("frames", frames.len() as f64);
    motion_metrics(&mut report, audio_beats, &poses)?;
    if let Some((expert, ecfg)) = &models.expert {
        report.push("sync_score", sync_score(expert, &corpus_basis(&ecfg.dims)?, &betas, audio)?);
    }
    let mut identity = 0.0;
    for f in &frames {
        identity += metrics::psnr(f, reference)?;
    }
    report.push("reference_psnr", identity / frames.len() as f64);
    Ok(GeneratedVideo { frames, betas, poses, report })
}

pub fn write_video(dir: &Path, video: &GeneratedVideo) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, f) in video.frames.iter().enumerate() {
        latentcodec::write_ppm(&frame_path(dir, i), f)?;
    }
    fs::write(dir.join(VIDEO_MANIFEST), format!("frames = {}\nfps = {FPS}\n", video.frames.len()))?;
    coeffio::write_coeffs(&dir.join(EXPRESSION_FILE), &video.betas)?;
    coeffio::write_coeffs(&dir.join(POSE_FILE), &video.poses)?;
    video.report.write(dir)
}

pub fn read_video_frames(dir: &Path) -> Result<Vec<Frame>> {
    let meta = parse_key_values(&fs::read_to_string(dir.join(VIDEO_MANIFEST))?)?;
    let n: usize = lookup(&meta, "frames")?;
    (0..n).map(|i| latentcodec::read_ppm(&frame_path(dir, i))).collect()
}

/// Reads a WAV file and a PPM reference frame, generates one frame per
/// 1/25 s of audio, and writes the video to `out`.
pub fn run_pipeline(audio_path: &Path, reference_path: &Path, models_root: &Path, out: &Path, seed: u64) -> Result<GeneratedVideo> {
    let models = Models::load(models_root)?;
    let wave = audiofeat::read_wav(audio_path)?;
    let frames = wave.frame_count();
    ensure!(frames >= 1, "audio is shorter than one frame");
    let audio = audiofeat::extract_features(&wave, frames, models.motion.1.dims.audio_bands)?;
    let reference = latentcodec::read_ppm(reference_path)?;
    ensure!(
        reference.size() == models.codec.1.dims.frame_size,
        "reference is {0}x{0}, models expect {1}x{1}",
        reference.size(),
        models.codec.1.dims.frame_size
    );
    let video = generate_video(&models, &audio, &audiofeat::detect_audio_beats(&wave), &reference, seed)?;
    write_video(out, &video)?;
    Ok(video)
}

/// Inputs available to [`evaluate_video`]; everything but the video is optional.
#[derive(Debug, Clone, Default)]
pub struct EvalInputs {
    pub video: PathBuf,
    /// Directory of ground-truth frames with its own manifest, or frames named like the video's.
    pub truth: Option<PathBuf>,
    pub audio: Option<PathBuf>,
    /// Model root holding a trained scorer.
    pub models: Option<PathBuf>,
}

/// Scores a generated video directory. Frame metrics need `truth`; beat
/// alignment needs `audio`; the sync score needs `audio` and a scorer.
pub fn evaluate_video(inputs: &EvalInputs) -> Result<Report> {
    let frames = read_video_frames(&inputs.video)?;
    let mut report = Report::default();
    report.push("frames", frames.len() as f64);
    if let Some(truth) = &inputs.truth {
        let truth_frames = if truth.join(VIDEO_MANIFEST).exists() {
            read_video_frames(truth)?
        } else {
            (0..frames.len()).map(|i| latentcodec::read_ppm(&frame_path(truth, i))).collect::<Result<Vec<_>>>()?
        };
        frame_metrics(&mut report, &frames, &truth_frames)?;
    }
    let pose_path = inputs.video.join(POSE_FILE);
    let poses = if pose_path.exists() { Some(coeffio::read_coeffs(&pose_path)?) } else { None };
    if let Some(audio_path) = &inputs.audio {
        let wave = audiofeat::read_wav(audio_path)?;
        if let Some(p) = &poses {
            motion_metrics(&mut report, &audiofeat::detect_audio_beats(&wave), p)?;
        }
        let exp_path = inputs.video.join(EXPRESSION_FILE);
        if let (Some(root), true) = (&inputs.models, exp_path.exists()) {
            let (expert, cfg) = load_expert(root)?;
            let betas = coeffio::read_coeffs(&exp_path)?;
            let audio = audiofeat::extract_features(&wave, betas.frames(), cfg.dims.audio_bands)?;
            report.push("sync_score", sync_score(&expert, &corpus_basis(&cfg.dims)?, &betas, &audio)?);
        }
    } else if let Some(p) = &poses {
        report.push("pose_diversity", metrics::motion_diversity(std::slice::from_ref(p))?);
    }
    Ok(report)
}

// ---------------------------------------------------------------- ablation

/// The model variants compared by an ablation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationArm {
    Full,
    SingleTransformer,
    ConcatConditions,
    NoAlignmentMask,
    NoSyncLoss,
}

impl AblationArm {
    pub const ALL: [AblationArm; 5] = [
        AblationArm::Full,
        AblationArm::SingleTransformer,
        AblationArm::ConcatConditions,
        AblationArm::NoAlignmentMask,
        AblationArm::NoSyncLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationArm::Full => "full",
            AblationArm::SingleTransformer => "single_transformer",
            AblationArm::ConcatConditions => "concat_unet_conditions",
            AblationArm::NoAlignmentMask => "no_alignment_mask",
            AblationArm::NoSyncLoss => "no_sync_loss",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// The base configuration with this arm's flag set.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            AblationArm::Full => {}
            AblationArm::SingleTransformer => cfg.single_transformer = true,
            AblationArm::ConcatConditions => cfg.concat_unet_conditions = true,
            AblationArm::NoAlignmentMask => cfg.no_alignment_mask = true,
            AblationArm::NoSyncLoss => cfg.no_sync_loss = true,
        }
        cfg
    }

    fn changes_motion(self) -> bool {
        !matches!(self, AblationArm::ConcatConditions)
    }

    fn changes_frames(self) -> bool {
        matches!(self, AblationArm::Full | AblationArm::ConcatConditions)
    }
}

/// Per-stage settings of an ablation run. The arm flags are applied on top.
#[derive(Debug, Clone)]
pub struct AblationPlan {
    pub expert: TrainConfig,
    pub motion: TrainConfig,
    pub codec: TrainConfig,
    pub unet: TrainConfig,
    pub seed: u64,
}

impl AblationPlan {
    pub fn uniform(cfg: &TrainConfig) -> Self {
        AblationPlan { expert: cfg.clone(), motion: cfg.clone(), codec: cfg.clone(), unet: cfg.clone(), seed: cfg.seed }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub arm: AblationArm,
    pub report: Report,
}

/// Trains each arm on `corpus` and scores sampled output on `held_out`.
///
/// The scorer and codec do not depend on any arm and are trained once.
/// Arms that only touch one stage reuse the full model's other stage.
pub fn run_ablation(corpus: &SyntheticCorpus, held_out: &SyntheticCorpus, plan: &AblationPlan, arms: &[AblationArm]) -> Result<Vec<AblationRow>> {
    ensure!(!held_out.clips.is_empty(), "held-out corpus is empty");
    let basis = corpus_basis(&plan.motion.dims)?;
    let (expert, _) = train::train_expert(corpus, &plan.expert, &basis)?;
    let (codec, _) = train::train_codec(corpus, &plan.codec)?;
    let sync = SyncTerm { expert: &expert, basis: &basis, corpus };

    let full_motion = train::train_stage1(corpus, &plan.motion, Some(&sync))?;
    let full_frames = train::train_stage2(corpus, &plan.unet, &codec, Some(&full_motion.0))?;

    let mut rows = Vec::with_capacity(arms.len());
    for &arm in arms {
        log::info!("ablation arm {}", arm.name());
        let own_motion;
        let (motion, motion_report) = if arm.changes_motion() && arm != AblationArm::Full {
            own_motion = train::train_stage1(corpus, &arm.apply(&plan.motion), Some(&sync))?;
            (&own_motion.0, &own_motion.1)
        } else {
            (&full_motion.0, &full_motion.1)
        };
        let own_frames;
        let (frames, frames_report) = if arm.changes_frames() && arm != AblationArm::Full {
            own_frames = train::train_stage2(corpus, &arm.apply(&plan.unet), &codec, Some(motion))?;
            (&own_frames.0, &own_frames.1)
        } else {
            (&full_frames.0, &full_frames.1)
        };
        let models = Models {
            motion: (motion.clone(), arm.apply(&plan.motion)),
            codec: (codec.clone(), plan.codec.clone()),
            unet: (frames.clone(), arm.apply(&plan.unet)),
            expert: Some((expert.clone(), plan.expert.clone())),
        };

        let mut report = Report::default();
        report.push("motion_loss", motion_report.final_loss);
        report.push("frame_loss", frames_report.final_loss);
        let (mut sync_total, mut beat_total) = (0.0, 0.0);
        let mut poses = Vec::new();
        let (mut generated, mut truth) = (Vec::new(), Vec::new());
        for (i, clip) in held_out.clips.iter().enumerate() {
            let video = generate_video(&models, &clip.audio, &clip.audio_beats, &clip.frames[0], derive_seed(plan.seed, i as u64))?;
            sync_total += video.report.get("sync_score").unwrap_or(0.0);
            beat_total += video.report.get("beat_align").unwrap_or(0.0);
            poses.push(video.poses);
            generated.extend(video.frames);
            truth.extend(clip.frames.iter().cloned());
        }
        let n = held_out.clips.len() as f64;
        report.push("sync_score", sync_total / n);
        report.push("beat_align", beat_total / n);
        report.push("pose_diversity", metrics::cross_sample_diversity(&poses)?);
        frame_metrics(&mut report, &generated, &truth)?;
        rows.push(AblationRow { arm, report });
    }
    Ok(rows)
}

/// One CSV row per arm, columns taken from the first row's report.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let Some(first) = rows.first() else { return String::new() };
    let mut s = String::from("arm");
    for (n, _) in &first.report.entries {
        let _ = write!(s, ",\"{n}\"");
    }
    s.push('\n');
    for row in rows {
        s.push_str(row.arm.name());
        for (_, v) in &row.report.entries {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}
