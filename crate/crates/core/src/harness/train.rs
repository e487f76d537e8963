//! Training loops for the scorer, both stage-one denoisers, the codec and the
//! frame denoiser.
//!
//! Every loop reports its loss on a fixed evaluation draw before the first
//! and after the last step, so overfit runs can be judged without sampling
//! noise.

use candle_core::Tensor;
use rand::Rng as _;

use super::config::TrainConfig;
use super::corpus::SyntheticCorpus;
use crate::diffcore::{self, NoiseSchedule};
use crate::error::{ensure, Error, Result};
use crate::face3d::{self, FaceBasis};
use crate::framegen::{self, FrameNet};
use crate::latentcodec::{self, Codec, RandomConvPyramid};
use crate::lipexpert::{self, ExpertTrainConfig, SyncClip, SyncExpert};
use crate::metrics;
use crate::motiongen::{self, MotionModel};
use crate::nn::Adam;
use crate::tensor::{self, derive_seed, Rng};

/// Stream ids for [`derive_seed`] so independent draws never share a generator.
const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
const SAMPLE_STREAM: u64 = 4;

/// Gradient-norm ceiling for stage one. The sync term's `1 / P` slope spikes
/// when the scorer rejects a prediction; unclipped, one spike inflates Adam's
/// second-moment estimate and stalls every other term for hundreds of steps.
pub const MOTION_GRAD_CLIP: f64 = 1.0;

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Evaluation loss before training.
    pub initial_loss: f64,
    /// Evaluation loss after training.
    pub final_loss: f64,
    /// Per-step training loss.
    pub history: Vec<f64>,
}

impl TrainReport {
    /// Fraction of the initial loss removed by training.
    pub fn reduction(&self) -> f64 {
        if self.initial_loss == 0.0 {
            0.0
        } else {
            1.0 - self.final_loss / self.initial_loss
        }
    }
}

pub fn schedule_for(cfg: &TrainConfig) -> Result<NoiseSchedule> {
    diffcore::build_schedule(cfg.timesteps, diffcore::DEFAULT_BETA_START, diffcore::DEFAULT_BETA_END)
}

/// `n` timesteps drawn uniformly from `1..=T`.
pub fn sample_timesteps(rng: &mut Rng, t_max: usize, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(1..=t_max)).collect()
}

fn steps_for(cfg: &TrainConfig, items: usize) -> usize {
    cfg.epochs * items.div_ceil(cfg.batch_size).max(1)
}

// ---------------------------------------------------------------- scorer

/// Mouth displacement and normalized audio of every clip.
pub fn sync_clips(corpus: &SyntheticCorpus, basis: &FaceBasis) -> Result<Vec<SyncClip>> {
    corpus
        .clips
        .iter()
        .map(|c| {
            Ok(SyncClip {
                mouth: face3d::mouth_displacement_sequence(basis, &c.betas.values)?,
                audio: c.audio.normalized()?,
            })
        })
        .collect()
}

/// Trains a fresh scorer for `epochs` full passes over the corpus.
pub fn train_expert(corpus: &SyntheticCorpus, cfg: &TrainConfig, basis: &FaceBasis) -> Result<(SyncExpert, TrainReport)> {
    cfg.validate()?;
    let expert = SyncExpert::init(cfg.expert_config(), derive_seed(cfg.seed, INIT_STREAM))?;
    let clips = sync_clips(corpus, basis)?;
    let tc = ExpertTrainConfig {
        steps: cfg.epochs,
        learning_rate: cfg.learning_rate,
        seed: derive_seed(cfg.seed, TRAIN_STREAM),
        ..ExpertTrainConfig::default()
    };
    let history = lipexpert::train_expert(&expert, &clips, &tc)?;
    let report = TrainReport {
        initial_loss: history.first().copied().unwrap_or(0.0),
        final_loss: history.last().copied().unwrap_or(0.0),
        history,
    };
    Ok((expert, report))
}

/// Mean scorer probability over clips at a given audio offset.
pub fn mean_sync(expert: &SyncExpert, clips: &[SyncClip], offset: isize) -> Result<f64> {
    let mut total = 0.0;
    for c in clips {
        total += expert.score_shifted(&c.mouth, &c.audio, offset)?;
    }
    Ok(total / clips.len() as f64)
}

// ---------------------------------------------------------------- stage one

/// One batch of noised coefficient sequences.
#[derive(Debug, Clone)]
pub struct MotionBatch {
    pub clips: Vec<usize>,
    pub ts: Vec<usize>,
    pub beta0: Tensor,
    pub pose0: Tensor,
    pub beta_t: Tensor,
    pub pose_t: Tensor,
    pub audio: Tensor,
}

pub fn draw_motion_batch(
    corpus: &SyntheticCorpus,
    size: usize,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<MotionBatch> {
    let clips: Vec<usize> = (0..size).map(|_| rng.gen_range(0..corpus.clips.len())).collect();
    let ts = sample_timesteps(rng, schedule.timesteps(), size);
    let stack = |f: &dyn Fn(usize) -> Result<Tensor>| -> Result<Tensor> {
        let parts = clips.iter().map(|&c| f(c)).collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&parts, 0)?)
    };
    let beta0 = stack(&|c| Ok(corpus.clips[c].betas.values.clone()))?;
    let pose0 = stack(&|c| Ok(corpus.clips[c].poses.values.clone()))?;
    let audio = stack(&|c| corpus.clips[c].audio.normalized())?;
    let eb = tensor::randn(beta0.shape().clone(), rng)?;
    let ep = tensor::randn(pose0.shape().clone(), rng)?;
    Ok(MotionBatch {
        beta_t: diffcore::forward_diffuse_batch(&beta0, &ts, &eb, schedule)?,
        pose_t: diffcore::forward_diffuse_batch(&pose0, &ts, &ep, schedule)?,
        clips,
        ts,
        beta0,
        pose0,
        audio,
    })
}

/// Unweighted terms and the weighted total of the stage-one objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub expression: f64,
    pub pose: f64,
    /// Zero when the sync term is disabled.
    pub sync: f64,
    pub total: f64,
}

/// Context the sync term needs.
pub struct SyncTerm<'a> {
    pub expert: &'a SyncExpert,
    pub basis: &'a FaceBasis,
    pub corpus: &'a SyntheticCorpus,
}

/// `l_exp * MSE(beta) + l_pose * MSE(p) + l_sync * L_sync` on one batch.
pub fn motion_loss(
    model: &MotionModel,
    batch: &MotionBatch,
    weights: (f64, f64, f64),
    sync: Option<&SyncTerm>,
) -> Result<(Tensor, LossBreakdown)> {
    let (we, wp, ws) = weights;
    let (beta_hat, pose_hat) = model.predict_batch(&batch.beta_t, &batch.pose_t, &batch.ts, &batch.audio)?;
    let l_exp = diffcore::x0_loss(&batch.beta0, &beta_hat)?;
    let l_pose = diffcore::x0_loss(&batch.pose0, &pose_hat)?;
    let mut total = ((&l_exp * we)? + (&l_pose * wp)?)?;
    let mut sync_value = 0.0;
    if ws > 0.0 {
        let term = sync.ok_or_else(|| Error::Config("sync loss enabled but no scorer supplied".into()))?;
        let mut parts = Vec::with_capacity(batch.clips.len());
        for (b, &c) in batch.clips.iter().enumerate() {
            let clip = &term.corpus.clips[c];
            parts.push(lipexpert::sequence_sync_loss(
                term.expert,
                term.basis,
                &clip.alpha_tensor()?,
                &beta_hat.get(b)?,
                &batch.audio.get(b)?,
            )?);
        }
        let l_sync = Tensor::stack(&parts, 0)?.mean_all()?;
        sync_value = tensor::scalar(&l_sync)?;
        total = (total + (l_sync * ws)?)?;
    }
    let breakdown = LossBreakdown {
        expression: tensor::scalar(&l_exp)?,
        pose: tensor::scalar(&l_pose)?,
        sync: sync_value,
        total: tensor::scalar(&total)?,
    };
    Ok((total, breakdown))
}

pub fn build_motion_model(cfg: &TrainConfig) -> Result<MotionModel> {
    let seed = derive_seed(cfg.seed, INIT_STREAM);
    if cfg.single_transformer {
        MotionModel::joint(cfg.joint_config(), cfg.dims.exp_dim, seed)
    } else {
        MotionModel::decoupled(cfg.expression_config(), cfg.pose_config(), seed)
    }
}

/// Trains `model` in place.
pub fn train_motion(
    model: &MotionModel,
    corpus: &SyntheticCorpus,
    cfg: &TrainConfig,
    sync: Option<&SyncTerm>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let ws = cfg.effective_lambda_sync();
    if ws > 0.0 && sync.is_none() {
        return Err(Error::Config("stage one with a sync loss needs a trained scorer".into()));
    }
    let weights = (cfg.lambda_exp, cfg.lambda_pose, ws);
    let schedule = schedule_for(cfg)?;
    let eval = draw_motion_batch(corpus, cfg.batch_size.max(8), &schedule, &mut tensor::rng(derive_seed(cfg.seed, EVAL_STREAM)))?;
    let initial = motion_loss(model, &eval, weights, sync)?.1.total;
    let mut rng = tensor::rng(derive_seed(cfg.seed, TRAIN_STREAM));
    let mut opt = Adam::new(model.vars(), cfg.learning_rate)?.with_grad_clip(MOTION_GRAD_CLIP);
    let steps = steps_for(cfg, corpus.clips.len());
    let mut history = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = draw_motion_batch(corpus, cfg.batch_size, &schedule, &mut rng)?;
        let (loss, parts) = motion_loss(model, &batch, weights, sync)?;
        opt.step(&loss)?;
        history.push(parts.total);
        if step % 100 == 0 {
            log::debug!("motion step {step}: {parts:?}");
        }
    }
    let final_loss = motion_loss(model, &eval, weights, sync)?.1.total;
    Ok(TrainReport { initial_loss: initial, final_loss, history })
}

pub fn train_stage1(
    corpus: &SyntheticCorpus,
    cfg: &TrainConfig,
    sync: Option<&SyncTerm>,
) -> Result<(MotionModel, TrainReport)> {
    let model = build_motion_model(cfg)?;
    let report = train_motion(&model, corpus, cfg, sync)?;
    Ok((model, report))
}

// ---------------------------------------------------------------- codec

/// Random same-clip frame pairs, stacked as `(B, 3, H, W)` twice.
pub fn draw_frame_pairs(corpus: &SyntheticCorpus, size: usize, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    let mut a = Vec::with_capacity(size);
    let mut b = Vec::with_capacity(size);
    for _ in 0..size {
        let clip = &corpus.clips[rng.gen_range(0..corpus.clips.len())];
        a.push(clip.frames[rng.gen_range(0..clip.len())].pixels.clone());
        b.push(clip.frames[rng.gen_range(0..clip.len())].pixels.clone());
    }
    Ok((Tensor::stack(&a, 0)?, Tensor::stack(&b, 0)?))
}

pub fn train_codec_model(codec: &Codec, corpus: &SyntheticCorpus, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let pyramid = RandomConvPyramid::default();
    let loss_of = |a: &Tensor, b: &Tensor| {
        latentcodec::codec_loss_batch(codec, a, b, &pyramid, cfg.lambda_rec, cfg.lambda_per)
    };
    let (ea, eb) = draw_frame_pairs(corpus, cfg.batch_size.max(8), &mut tensor::rng(derive_seed(cfg.seed, EVAL_STREAM)))?;
    let initial = tensor::scalar(&loss_of(&ea, &eb)?)?;
    let mut rng = tensor::rng(derive_seed(cfg.seed, TRAIN_STREAM));
    let mut opt = Adam::new(codec.params.vars(), cfg.learning_rate)?;
    let frames: usize = corpus.clips.iter().map(|c| c.len()).sum();
    let steps = steps_for(cfg, frames);
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (a, b) = draw_frame_pairs(corpus, cfg.batch_size, &mut rng)?;
        let loss = loss_of(&a, &b)?;
        history.push(tensor::scalar(&loss)?);
        opt.step(&loss)?;
    }
    let final_loss = tensor::scalar(&loss_of(&ea, &eb)?)?;
    Ok(TrainReport { initial_loss: initial, final_loss, history })
}

pub fn train_codec(corpus: &SyntheticCorpus, cfg: &TrainConfig) -> Result<(Codec, TrainReport)> {
    let codec = Codec::init(cfg.codec_config(), derive_seed(cfg.seed, INIT_STREAM))?;
    let report = train_codec_model(&codec, corpus, cfg)?;
    Ok((codec, report))
}

/// Mean PSNR of `D([E(F), E(F)])` against `F`.
pub fn self_reconstruction_psnr(codec: &Codec, frames: &[latentcodec::Frame]) -> Result<f64> {
    let mut total = 0.0;
    for f in frames {
        let z = codec.encode(f)?;
        total += metrics::psnr(&codec.decode(&z, &z)?, f)?;
    }
    Ok(total / frames.len() as f64)
}

// ---------------------------------------------------------------- stage two

/// Encoded frames and per-frame conditions of every clip.
#[derive(Debug, Clone)]
pub struct LatentClip {
    /// `(F, d, h, w)`
    pub latents: Tensor,
    /// `(F, D_beta + D_p)`
    pub motion: Tensor,
}

/// Encodes every frame and pairs it with ground-truth coefficients or, when
/// `motion` is given, with coefficients sampled from the stage-one model.
pub fn encode_corpus(
    corpus: &SyntheticCorpus,
    codec: &Codec,
    motion: Option<(&MotionModel, &NoiseSchedule, usize, u64)>,
) -> Result<Vec<LatentClip>> {
    corpus
        .clips
        .iter()
        .enumerate()
        .map(|(i, clip)| {
            let pixels: Vec<Tensor> = clip.frames.iter().map(|f| f.pixels.clone()).collect();
            let latents = codec.encode_batch(&Tensor::stack(&pixels, 0)?)?.detach();
            let motion = match motion {
                None => Tensor::cat(&[&clip.betas.values, &clip.poses.values], 1)?,
                Some((model, schedule, steps, seed)) => {
                    let (b, p) = motiongen::generate_motion(&clip.audio, model, schedule, steps, derive_seed(seed, i as u64))?;
                    Tensor::cat(&[&b.values, &p.values], 1)?
                }
            };
            Ok(LatentClip { latents, motion })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FrameBatch {
    pub ts: Vec<usize>,
    pub j0: Tensor,
    pub eps: Tensor,
    pub motion: Tensor,
    pub reference: Tensor,
}

/// Random `(clip, frame, t)` draws; the reference is each clip's first frame.
pub fn draw_frame_batch(clips: &[LatentClip], size: usize, t_max: usize, rng: &mut Rng) -> Result<FrameBatch> {
    let (mut j0, mut motion, mut reference) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..size {
        let c = &clips[rng.gen_range(0..clips.len())];
        let i = rng.gen_range(0..c.latents.dims()[0]);
        j0.push(c.latents.get(i)?);
        motion.push(c.motion.get(i)?);
        reference.push(c.latents.get(0)?);
    }
    let ts = sample_timesteps(rng, t_max, size);
    let j0 = Tensor::stack(&j0, 0)?;
    let eps = tensor::randn(j0.shape().clone(), rng)?;
    Ok(FrameBatch { ts, j0, eps, motion: Tensor::stack(&motion, 0)?, reference: Tensor::stack(&reference, 0)? })
}

fn frame_batch_loss(net: &FrameNet, batch: &FrameBatch, schedule: &NoiseSchedule) -> Result<Tensor> {
    framegen::frame_loss(&net.denoiser, &batch.j0, &batch.ts, &batch.eps, &batch.motion, &batch.reference, schedule)
}

pub fn train_frames(net: &FrameNet, clips: &[LatentClip], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    ensure!(!clips.is_empty(), "need at least one clip");
    let schedule = schedule_for(cfg)?;
    let eval = draw_frame_batch(clips, cfg.batch_size.max(8), cfg.timesteps, &mut tensor::rng(derive_seed(cfg.seed, EVAL_STREAM)))?;
    let initial = tensor::scalar(&frame_batch_loss(net, &eval, &schedule)?)?;
    let mut rng = tensor::rng(derive_seed(cfg.seed, TRAIN_STREAM));
    let mut opt = Adam::new(net.params.vars(), cfg.learning_rate)?;
    let frames: usize = clips.iter().map(|c| c.latents.dims()[0]).sum();
    let steps = steps_for(cfg, frames);
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        let batch = draw_frame_batch(clips, cfg.batch_size, cfg.timesteps, &mut rng)?;
        let loss = frame_batch_loss(net, &batch, &schedule)?;
        history.push(tensor::scalar(&loss)?);
        opt.step(&loss)?;
    }
    let final_loss = tensor::scalar(&frame_batch_loss(net, &eval, &schedule)?)?;
    Ok(TrainReport { initial_loss: initial, final_loss, history })
}

/// Trains a fresh frame denoiser. Without teacher forcing, `motion` must
/// supply the stage-one model whose samples condition training.
pub fn train_stage2(
    corpus: &SyntheticCorpus,
    cfg: &TrainConfig,
    codec: &Codec,
    motion: Option<&MotionModel>,
) -> Result<(FrameNet, TrainReport)> {
    let schedule = schedule_for(cfg)?;
    let clips = if cfg.teacher_forcing {
        encode_corpus(corpus, codec, None)?
    } else {
        let model = motion.ok_or_else(|| Error::Config("stage two without teacher forcing needs a stage-one model".into()))?;
        encode_corpus(corpus, codec, Some((model, &schedule, cfg.inference_steps, derive_seed(cfg.seed, SAMPLE_STREAM))))?
    };
    let net = FrameNet::init(cfg.framegen_config(), derive_seed(cfg.seed, INIT_STREAM))?;
    let report = train_frames(&net, &clips, cfg)?;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ModelDims;
    use crate::harness::corpus::{corpus_basis, make_corpus};

    fn tiny_cfg() -> TrainConfig {
        let dims = ModelDims {
            frame_size: 16,
            motion_width: 8,
            motion_heads: 2,
            motion_layers: 1,
            expert_hidden: 8,
            expert_embed: 4,
            codec_channels: 4,
            codec_latent: 4,
            unet_channels: 8,
            unet_context: 8,
            unet_heads: 2,
            unet_groups: 2,
            ..ModelDims::default()
        };
        TrainConfig { batch_size: 2, epochs: 2, learning_rate: 1e-3, timesteps: 100, inference_steps: 3, dims, ..Default::default() }
    }

    fn corpus(cfg: &TrainConfig) -> (SyntheticCorpus, FaceBasis) {
        let basis = corpus_basis(&cfg.dims).unwrap();
        (make_corpus(2, 10, 1, &basis, &cfg.dims).unwrap(), basis)
    }

    #[test]
    fn timesteps_are_uniform_on_full_range() {
        let mut rng = tensor::rng(0);
        let ts = sample_timesteps(&mut rng, 10, 20_000);
        assert!(ts.iter().all(|&t| (1..=10).contains(&t)));
        for v in 1..=10 {
            let frac = ts.iter().filter(|&&t| t == v).count() as f64 / ts.len() as f64;
            assert!((frac - 0.1).abs() < 0.01, "t = {v}: {frac}");
        }
    }

    #[test]
    fn missing_scorer_is_a_configuration_error() {
        let cfg = tiny_cfg();
        let (c, _) = corpus(&cfg);
        assert!(matches!(train_stage1(&c, &cfg, None), Err(Error::Config(_))));
        let cfg = TrainConfig { no_sync_loss: true, ..cfg };
        assert!(train_stage1(&c, &cfg, None).is_ok());
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let cfg = TrainConfig { lambda_exp: 0.0, lambda_pose: 0.0, lambda_sync: 0.0, ..tiny_cfg() };
        let (c, _) = corpus(&cfg);
        let model = build_motion_model(&cfg).unwrap();
        let before: Vec<_> = model.param_sets().iter().map(|p| p.snapshot().unwrap()).collect();
        train_motion(&model, &c, &cfg, None).unwrap();
        let after: Vec<_> = model.param_sets().iter().map(|p| p.snapshot().unwrap()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn sync_flag_matches_zero_weight() {
        let base = tiny_cfg();
        let (c, basis) = corpus(&base);
        let (expert, _) = train_expert(&c, &TrainConfig { epochs: 2, ..base.clone() }, &basis).unwrap();
        let term = SyncTerm { expert: &expert, basis: &basis, corpus: &c };
        let run = |cfg: &TrainConfig| {
            let (m, r) = train_stage1(&c, cfg, Some(&term)).unwrap();
            (m.param_sets().iter().map(|p| p.snapshot().unwrap()).collect::<Vec<_>>(), r.history)
        };
        let flag = run(&TrainConfig { no_sync_loss: true, ..base.clone() });
        let zero = run(&TrainConfig { lambda_sync: 0.0, ..base.clone() });
        assert_eq!(flag, zero);
        let with_sync = run(&base);
        assert_ne!(with_sync.1, flag.1);
    }

    #[test]
    fn weights_scale_their_terms() {
        let cfg = tiny_cfg();
        let (c, basis) = corpus(&cfg);
        let (expert, _) = train_expert(&c, &cfg, &basis).unwrap();
        let term = SyncTerm { expert: &expert, basis: &basis, corpus: &c };
        let model = build_motion_model(&cfg).unwrap();
        let batch = draw_motion_batch(&c, 2, &schedule_for(&cfg).unwrap(), &mut tensor::rng(3)).unwrap();
        let (_, one) = motion_loss(&model, &batch, (1.0, 1.0, 0.1), Some(&term)).unwrap();
        let (_, two) = motion_loss(&model, &batch, (2.0, 1.0, 0.1), Some(&term)).unwrap();
        assert!((two.total - one.total - one.expression).abs() < 1e-12);
        assert!((one.total - (one.expression + one.pose + 0.1 * one.sync)).abs() < 1e-12);
        let (_, none) = motion_loss(&model, &batch, (1.0, 1.0, 0.0), None).unwrap();
        assert_eq!(none.sync, 0.0);
    }

    #[test]
    fn zero_epochs_and_determinism() {
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let (c, _) = corpus(&cfg);
        let (codec, r) = train_codec(&c, &cfg).unwrap();
        assert!(r.history.is_empty());
        let fresh = Codec::init(cfg.codec_config(), derive_seed(cfg.seed, INIT_STREAM)).unwrap();
        assert_eq!(codec.params.snapshot().unwrap(), fresh.params.snapshot().unwrap());

        let cfg = TrainConfig { epochs: 1, ..cfg };
        let a = train_codec(&c, &cfg).unwrap().0.params.snapshot().unwrap();
        let b = train_codec(&c, &cfg).unwrap().0.params.snapshot().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stage_two_paths() {
        let cfg = TrainConfig { epochs: 1, ..tiny_cfg() };
        let (c, _) = corpus(&cfg);
        let (codec, _) = train_codec(&c, &cfg).unwrap();
        let (net, r) = train_stage2(&c, &cfg, &codec, None).unwrap();
        assert!(r.final_loss.is_finite());
        assert!(net.denoiser.attention_blocks().iter().all(|b| b.context_count() == 2));

        let sampled = TrainConfig { teacher_forcing: false, no_sync_loss: true, ..cfg.clone() };
        assert!(matches!(train_stage2(&c, &sampled, &codec, None), Err(Error::Config(_))));
        let (motion, _) = train_stage1(&c, &sampled, None).unwrap();
        assert!(train_stage2(&c, &sampled, &codec, Some(&motion)).is_ok());

        let fused = TrainConfig { concat_unet_conditions: true, ..cfg };
        let (net, _) = train_stage2(&c, &fused, &codec, None).unwrap();
        assert!(net.denoiser.attention_blocks().iter().all(|b| b.context_count() == 1));
    }
}
