//! Stage one: audio-conditioned denoisers for coefficient sequences.
//!
//! Each denoiser is a pre-norm transformer over the `F` frames of a noisy
//! coefficient sequence. Every layer runs self-attention, cross-attention on
//! the per-frame audio condition, then a feed-forward block. Cross-attention
//! is restricted to the alignment band `|i - j| <= k`; self-attention sees the
//! whole sequence.
//!
//! Expression and pose get separate denoisers with disjoint parameters; the
//! joint variant (one denoiser over the concatenated coefficients) exists for
//! ablations.

use candle_core::{Tensor, D};

use crate::audiofeat::AudioFeatureSequence;
use crate::diffcore::{self, NoiseSchedule};
use crate::error::{ensure, Result};
use crate::nn::{band_bias, CrossAttention, LayerNorm, Linear, ParamBuilder, ParamStore};
use crate::tensor::{self, derive_seed};

pub const DEFAULT_WINDOW: usize = 3;
pub const TIME_EMBED_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoeffKind {
    Expression,
    Pose,
    /// Expression then pose, concatenated per frame.
    Joint,
    Identity,
}

impl CoeffKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CoeffKind::Expression => "expression",
            CoeffKind::Pose => "pose",
            CoeffKind::Joint => "joint",
            CoeffKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "expression" => CoeffKind::Expression,
            "pose" => CoeffKind::Pose,
            "joint" => CoeffKind::Joint,
            "identity" => CoeffKind::Identity,
            _ => return None,
        })
    }
}

/// `F x D` coefficients: expressions, poses, or both.
#[derive(Debug, Clone)]
pub struct CoeffSequence {
    pub values: Tensor,
    pub kind: CoeffKind,
}

impl CoeffSequence {
    pub fn new(values: Tensor, kind: CoeffKind) -> Result<Self> {
        values.dims2()?;
        Ok(Self { values, kind })
    }

    pub fn frames(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn rows(&self) -> Result<Vec<Vec<f64>>> {
        Ok(self.values.to_vec2::<f64>()?)
    }
}

/// Band mask: entry `(i, j)` is true iff `|i - j| <= radius`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMask {
    frames: usize,
    radius: usize,
}

impl AlignmentMask {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        i.abs_diff(j) <= self.radius
    }

    pub fn to_matrix(&self) -> Vec<Vec<bool>> {
        (0..self.frames)
            .map(|i| (0..self.frames).map(|j| self.allows(i, j)).collect())
            .collect()
    }

    /// Additive logit bias: 0 where allowed, a large negative value elsewhere.
    pub fn to_bias(&self) -> Result<Tensor> {
        band_bias(self.frames, Some(self.radius))
    }
}

pub fn alignment_mask(frames: usize, radius: usize) -> Result<AlignmentMask> {
    ensure!(frames >= 1, "mask needs at least one frame");
    Ok(AlignmentMask { frames, radius })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionConfig {
    pub coeff_dim: usize,
    pub audio_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_mult: usize,
    /// Alignment radius; `None` disables the mask entirely.
    pub window: Option<usize>,
}

impl MotionConfig {
    /// Full-size defaults: six layers, radius three.
    pub fn new(coeff_dim: usize, audio_dim: usize) -> Self {
        Self { coeff_dim, audio_dim, width: 64, heads: 4, layers: 6, ff_mult: 2, window: Some(DEFAULT_WINDOW) }
    }

    /// Small model used by tests and the example programs.
    pub fn desk(coeff_dim: usize, audio_dim: usize) -> Self {
        Self { width: 32, layers: 2, ..Self::new(coeff_dim, audio_dim) }
    }

    fn validate(&self) -> Result<()> {
        ensure!(self.layers >= 1, "need at least one layer");
        ensure!(
            self.heads >= 1 && self.width.is_multiple_of(self.heads),
            "width {} not divisible by {} heads",
            self.width,
            self.heads
        );
        ensure!(self.coeff_dim >= 1 && self.audio_dim >= 1, "dimensions must be positive");
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MotionBlock {
    pub self_norm: LayerNorm,
    pub self_attn: CrossAttention,
    pub cross_norm: LayerNorm,
    pub cross_attn: CrossAttention,
    pub ff_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl MotionBlock {
    fn new(b: &mut ParamBuilder, c: &MotionConfig) -> Result<Self> {
        let w = c.width;
        Ok(Self {
            self_norm: LayerNorm::new(&mut b.sub("self_norm"), w)?,
            self_attn: CrossAttention::new(&mut b.sub("self_attn"), w, w, w, c.heads)?,
            cross_norm: LayerNorm::new(&mut b.sub("cross_norm"), w)?,
            cross_attn: CrossAttention::new(&mut b.sub("cross_attn"), w, w, w, c.heads)?,
            ff_norm: LayerNorm::new(&mut b.sub("ff_norm"), w)?,
            ff_in: Linear::new(&mut b.sub("ff_in"), w, w * c.ff_mult, true)?,
            ff_out: Linear::new(&mut b.sub("ff_out"), w * c.ff_mult, w, true)?,
        })
    }

    fn forward(&self, h: &Tensor, cond: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let n = self.self_norm.forward(h)?;
        let h = (h + self.self_attn.forward(&n, &n, None)?)?;
        let n = self.cross_norm.forward(&h)?;
        let h = (&h + self.cross_attn.forward(&n, cond, bias)?)?;
        let n = self.ff_norm.forward(&h)?;
        let ff = self.ff_out.forward(&self.ff_in.forward(&n)?.silu()?)?;
        Ok((h + ff)?)
    }
}

/// Transformer that predicts the clean sequence from a noisy one.
#[derive(Debug, Clone)]
pub struct MotionDenoiser {
    pub config: MotionConfig,
    pub input: Linear,
    /// Projects `[time embedding | audio row]` to the model width.
    pub condition: Linear,
    pub blocks: Vec<MotionBlock>,
    pub out_norm: LayerNorm,
    pub output: Linear,
}

impl MotionDenoiser {
    pub fn new(b: &mut ParamBuilder, config: MotionConfig) -> Result<Self> {
        config.validate()?;
        let w = config.width;
        let blocks = (0..config.layers)
            .map(|i| MotionBlock::new(&mut b.sub(&format!("block{i}")), &config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input: Linear::new(&mut b.sub("input"), config.coeff_dim, w, true)?,
            condition: Linear::new(&mut b.sub("condition"), TIME_EMBED_DIM + config.audio_dim, w, true)?,
            blocks,
            out_norm: LayerNorm::new(&mut b.sub("out_norm"), w)?,
            output: Linear::new(&mut b.sub("output"), w, config.coeff_dim, true)?,
            config,
        })
    }

    fn bias(&self, frames: usize) -> Result<Option<Tensor>> {
        self.config.window.map(|k| band_bias(frames, Some(k))).transpose()
    }

    /// Batched forward pass: `x_t: (B, F, D)`, `audio: (B, F, D_a)` normalized features.
    pub fn forward(&self, x_t: &Tensor, ts: &[usize], audio: &Tensor) -> Result<Tensor> {
        let (b, f, d) = x_t.dims3()?;
        ensure!(d == self.config.coeff_dim, "coefficient width {d} != {}", self.config.coeff_dim);
        let (ba, fa, _) = audio.dims3()?;
        ensure!(ba == b && fa == f, "audio ({ba}, {fa}) does not match sequence ({b}, {f})");
        let cond = condition_batch(audio, ts, &self.condition)?;
        let positions: Vec<f64> = (0..f).map(|i| i as f64).collect();
        let pe = tensor::sinusoidal_table(&positions, self.config.width)?;
        let mut h = self.input.forward(x_t)?.broadcast_add(&pe)?;
        let bias = self.bias(f)?;
        for block in &self.blocks {
            h = block.forward(&h, &cond, bias.as_ref())?;
        }
        self.output.forward(&self.out_norm.forward(&h)?)
    }

    /// Single-sequence prediction `x0_hat = theta(x_t, t, A)`: `(F, D)` in and out.
    pub fn predict(&self, x_t: &Tensor, t: usize, audio: &AudioFeatureSequence) -> Result<Tensor> {
        let a = audio.normalized()?.unsqueeze(0)?;
        Ok(self.forward(&x_t.unsqueeze(0)?, &[t], &a)?.squeeze(0)?)
    }
}

fn condition_batch(audio: &Tensor, ts: &[usize], proj: &Linear) -> Result<Tensor> {
    let (b, f, _) = audio.dims3()?;
    ensure!(ts.len() == b, "need {b} timesteps, got {}", ts.len());
    let temb: Vec<f64> = ts
        .iter()
        .flat_map(|&t| tensor::sinusoidal(t as f64, TIME_EMBED_DIM))
        .collect();
    let temb = tensor::from_vec(temb, (b, 1, TIME_EMBED_DIM))?.broadcast_as((b, f, TIME_EMBED_DIM))?;
    let c = Tensor::cat(&[&temb.contiguous()?, audio], D::Minus1)?;
    proj.forward(&c)
}

/// `tau(c)`: per-frame projection of `[sinusoidal(t) | audio row]`, `(F, width)`.
pub fn build_condition(audio: &AudioFeatureSequence, t: usize, denoiser: &MotionDenoiser) -> Result<Tensor> {
    ensure!(
        audio.dim() == denoiser.config.audio_dim,
        "audio width {} != {}",
        audio.dim(),
        denoiser.config.audio_dim
    );
    let a = audio.normalized()?.unsqueeze(0)?;
    Ok(condition_batch(&a, &[t], &denoiser.condition)?.squeeze(0)?)
}

/// Cross-attention of `queries (F, W)` on `context (F, D_tau)` under the mask.
/// Returns the attention output (without residual) and the `(heads, F, F)` weights.
pub fn masked_cross_attention(
    queries: &Tensor,
    context: &Tensor,
    mask: &AlignmentMask,
    weights: &CrossAttention,
) -> Result<(Tensor, Tensor)> {
    let (f, _) = queries.dims2()?;
    let (fc, _) = context.dims2()?;
    ensure!(
        f == mask.frames() && fc == mask.frames(),
        "mask is {0}x{0}, inputs have {f} and {fc} rows",
        mask.frames()
    );
    let bias = mask.to_bias()?;
    let (out, probs) = weights.forward_with_probs(&queries.unsqueeze(0)?, &context.unsqueeze(0)?, Some(&bias))?;
    Ok((out.squeeze(0)?, probs.squeeze(0)?))
}

/// Predicted clean sequence from a noisy one.
pub fn denoise_motion(
    x_t: &CoeffSequence,
    t: usize,
    audio: &AudioFeatureSequence,
    denoiser: &MotionDenoiser,
) -> Result<CoeffSequence> {
    ensure!(
        x_t.frames() == audio.frames(),
        "sequence has {} frames, audio has {}",
        x_t.frames(),
        audio.frames()
    );
    CoeffSequence::new(denoiser.predict(&x_t.values, t, audio)?, x_t.kind)
}

/// A denoiser together with the parameters it reads.
#[derive(Debug, Clone)]
pub struct MotionNet {
    pub denoiser: MotionDenoiser,
    pub params: ParamStore,
}

impl MotionNet {
    pub fn init(config: MotionConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = tensor::rng(seed);
        let denoiser = MotionDenoiser::new(&mut ParamBuilder::init(&mut params, &mut rng), config)?;
        Ok(Self { denoiser, params })
    }

    pub fn from_params(config: MotionConfig, mut params: ParamStore) -> Result<Self> {
        let denoiser = MotionDenoiser::new(&mut ParamBuilder::load(&mut params), config)?;
        Ok(Self { denoiser, params })
    }
}

/// The stage-one model: decoupled expression/pose denoisers, or one joint denoiser.
#[derive(Debug, Clone)]
pub enum MotionModel {
    Decoupled { expression: MotionNet, pose: MotionNet },
    Joint { net: MotionNet, exp_dim: usize },
}

impl MotionModel {
    /// Two denoisers with independent initializations.
    pub fn decoupled(exp: MotionConfig, pose: MotionConfig, seed: u64) -> Result<Self> {
        Ok(MotionModel::Decoupled {
            expression: MotionNet::init(exp, derive_seed(seed, 0))?,
            pose: MotionNet::init(pose, derive_seed(seed, 1))?,
        })
    }

    /// One denoiser over `[beta | p]`; `config.coeff_dim` must be `exp_dim + pose_dim`.
    pub fn joint(config: MotionConfig, exp_dim: usize, seed: u64) -> Result<Self> {
        ensure!(exp_dim < config.coeff_dim, "joint width must exceed expression width");
        Ok(MotionModel::Joint { net: MotionNet::init(config, derive_seed(seed, 0))?, exp_dim })
    }

    pub fn exp_dim(&self) -> usize {
        match self {
            MotionModel::Decoupled { expression, .. } => expression.denoiser.config.coeff_dim,
            MotionModel::Joint { exp_dim, .. } => *exp_dim,
        }
    }

    pub fn pose_dim(&self) -> usize {
        match self {
            MotionModel::Decoupled { pose, .. } => pose.denoiser.config.coeff_dim,
            MotionModel::Joint { net, exp_dim } => net.denoiser.config.coeff_dim - exp_dim,
        }
    }

    pub fn is_joint(&self) -> bool {
        matches!(self, MotionModel::Joint { .. })
    }

    /// All trainable parameter sets; one for the joint arm, two otherwise.
    pub fn param_sets(&self) -> Vec<&ParamStore> {
        match self {
            MotionModel::Decoupled { expression, pose } => vec![&expression.params, &pose.params],
            MotionModel::Joint { net, .. } => vec![&net.params],
        }
    }

    pub fn vars(&self) -> Vec<candle_core::Var> {
        self.param_sets().into_iter().flat_map(|p| p.vars()).collect()
    }

    /// Predicts clean `(beta, p)` batches from noisy ones.
    /// `beta_t: (B, F, D_beta)`, `p_t: (B, F, D_p)`, `audio: (B, F, D_a)` normalized.
    pub fn predict_batch(
        &self,
        beta_t: &Tensor,
        pose_t: &Tensor,
        ts: &[usize],
        audio: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        match self {
            MotionModel::Decoupled { expression, pose } => Ok((
                expression.denoiser.forward(beta_t, ts, audio)?,
                pose.denoiser.forward(pose_t, ts, audio)?,
            )),
            MotionModel::Joint { net, exp_dim } => {
                let x = Tensor::cat(&[beta_t, pose_t], D::Minus1)?;
                let y = net.denoiser.forward(&x, ts, audio)?;
                let dp = y.dims()[2] - exp_dim;
                Ok((y.narrow(2, 0, *exp_dim)?, y.narrow(2, *exp_dim, dp)?))
            }
        }
    }
}

/// Samples `(beta_0, p_0)` for the audio clip with `eta = 0`.
///
/// Expression and pose use independent noise streams derived from `seed`, so
/// changing one denoiser never perturbs the other's output.
pub fn generate_motion(
    audio: &AudioFeatureSequence,
    model: &MotionModel,
    schedule: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<(CoeffSequence, CoeffSequence)> {
    generate_motion_eta(audio, model, schedule, steps, 0.0, seed)
}

pub fn generate_motion_eta(
    audio: &AudioFeatureSequence,
    model: &MotionModel,
    schedule: &NoiseSchedule,
    steps: usize,
    eta: f64,
    seed: u64,
) -> Result<(CoeffSequence, CoeffSequence)> {
    let f = audio.frames();
    match model {
        MotionModel::Decoupled { expression, pose } => {
            let run = |net: &MotionNet, stream: u64| {
                diffcore::sample(
                    |x, t| net.denoiser.predict(x, t, audio),
                    (f, net.denoiser.config.coeff_dim),
                    schedule,
                    steps,
                    eta,
                    derive_seed(seed, stream),
                )
            };
            Ok((
                CoeffSequence::new(run(expression, 0)?, CoeffKind::Expression)?,
                CoeffSequence::new(run(pose, 1)?, CoeffKind::Pose)?,
            ))
        }
        MotionModel::Joint { net, exp_dim } => {
            let d = net.denoiser.config.coeff_dim;
            let x = diffcore::sample(
                |x, t| net.denoiser.predict(x, t, audio),
                (f, d),
                schedule,
                steps,
                eta,
                derive_seed(seed, 0),
            )?;
            Ok((
                CoeffSequence::new(x.narrow(1, 0, *exp_dim)?, CoeffKind::Expression)?,
                CoeffSequence::new(x.narrow(1, *exp_dim, d - exp_dim)?, CoeffKind::Pose)?,
            ))
        }
    }
}
