//! Frame denoiser: a small UNet over latent images whose attention blocks
//! take the per-frame motion coefficients first and the reference appearance
//! second, through two separate cross-attention layers.

use candle_core::{Tensor, D};
use rayon::prelude::*;

use crate::diffcore::{self, NoiseSchedule};
use crate::error::{ensure, Result};
use crate::latentcodec::{Codec, Frame, LatentImage};
use crate::motiongen::CoeffSequence;
use crate::nn::{Conv2d, CrossAttention, GroupNorm, LayerNorm, Linear, ParamBuilder, ParamStore};
use crate::tensor::{self, derive_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameGenConfig {
    pub latent_channels: usize,
    pub exp_dim: usize,
    pub pose_dim: usize,
    /// Channels at full latent resolution; doubled after the downsample.
    pub channels: usize,
    /// Width of the motion and reference tokens.
    pub context_dim: usize,
    pub heads: usize,
    pub groups: usize,
    pub time_dim: usize,
    /// Fuse motion and reference tokens into one attention context.
    pub concat_conditions: bool,
    /// Add a 2-D sinusoidal encoding to the reference tokens.
    pub reference_positions: bool,
}

impl FrameGenConfig {
    pub fn new(latent_channels: usize, exp_dim: usize, pose_dim: usize) -> Self {
        Self {
            latent_channels,
            exp_dim,
            pose_dim,
            channels: 32,
            context_dim: 32,
            heads: 4,
            groups: 8,
            time_dim: 64,
            concat_conditions: false,
            reference_positions: true,
        }
    }

    pub fn motion_dim(&self) -> usize {
        self.exp_dim + self.pose_dim
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels;
        ensure!(c > 0 && c.is_multiple_of(self.groups), "channels {c} not divisible by {} groups", self.groups);
        ensure!(c.is_multiple_of(self.heads) && self.context_dim.is_multiple_of(2), "bad attention widths");
        ensure!(self.time_dim.is_multiple_of(2), "time embedding width must be even");
        Ok(())
    }
}

/// Two-dimensional sinusoidal table `(h * w, dim)`: row code in the first
/// half of the channels, column code in the second.
pub fn grid_positional_encoding(h: usize, w: usize, dim: usize) -> Result<Tensor> {
    ensure!(dim.is_multiple_of(2), "positional width must be even");
    let mut data = Vec::with_capacity(h * w * dim);
    for r in 0..h {
        let row = tensor::sinusoidal(r as f64, dim / 2);
        for c in 0..w {
            data.extend_from_slice(&row);
            data.extend(tensor::sinusoidal(c as f64, dim / 2));
        }
    }
    tensor::from_vec(data, (h * w, dim))
}

/// `(B, C, H, W) -> (B, H*W, C)`.
pub fn to_tokens(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()?)
}

fn from_tokens(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, _, c) = x.dims3()?;
    Ok(x.transpose(1, 2)?.contiguous()?.reshape((b, c, h, w))?)
}

/// Residual update from the single motion token: `features + attn(features, motion)`.
/// Returns the result and the attention weights `(B, heads, N, 1)`.
pub fn motion_cross_attention(features: &Tensor, motion: &Tensor, attn: &CrossAttention) -> Result<(Tensor, Tensor)> {
    let n = motion.dims3()?.1;
    ensure!(n == 1, "motion context must be a single token, got {n}");
    let (out, probs) = attn.forward_with_probs(features, motion, None)?;
    Ok(((features + out)?, probs))
}

/// Residual update from reference-latent tokens: `features + attn(features, reference)`.
pub fn appearance_cross_attention(
    features: &Tensor,
    reference: &Tensor,
    attn: &CrossAttention,
) -> Result<(Tensor, Tensor)> {
    let (out, probs) = attn.forward_with_probs(features, reference, None)?;
    Ok(((features + out)?, probs))
}

#[derive(Debug, Clone)]
pub enum Conditioning {
    /// Motion attention followed by appearance attention.
    Sequential { motion: CrossAttention, appearance: CrossAttention },
    /// One attention over `[motion token | reference tokens]`.
    Fused { joint: CrossAttention },
}

/// Attention block at one UNet resolution.
#[derive(Debug, Clone)]
pub struct FrameAttentionBlock {
    pub norm: LayerNorm,
    pub conditioning: Conditioning,
    pub ff_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub proj: Linear,
}

/// Attention weights recorded during one block call.
#[derive(Debug, Clone)]
pub struct BlockProbs {
    pub motion: Option<Tensor>,
    pub appearance: Option<Tensor>,
    pub joint: Option<Tensor>,
}

impl FrameAttentionBlock {
    fn new(b: &mut ParamBuilder, ch: usize, cfg: &FrameGenConfig) -> Result<Self> {
        let cc = cfg.context_dim;
        let conditioning = if cfg.concat_conditions {
            Conditioning::Fused { joint: CrossAttention::new(&mut b.sub("joint"), ch, cc, ch, cfg.heads)? }
        } else {
            Conditioning::Sequential {
                motion: CrossAttention::new(&mut b.sub("motion"), ch, cc, ch, cfg.heads)?,
                appearance: CrossAttention::new(&mut b.sub("appearance"), ch, cc, ch, cfg.heads)?,
            }
        };
        Ok(Self {
            norm: LayerNorm::new(&mut b.sub("norm"), ch)?,
            conditioning,
            ff_norm: LayerNorm::new(&mut b.sub("ff_norm"), ch)?,
            ff_in: Linear::new(&mut b.sub("ff_in"), ch, 2 * ch, true)?,
            ff_out: Linear::new(&mut b.sub("ff_out"), 2 * ch, ch, true)?,
            proj: Linear::new(&mut b.sub("proj"), ch, ch, true)?,
        })
    }

    /// `x: (B, C, H, W)`, `motion: (B, 1, Cc)`, `reference: (B, N, Cc)`.
    pub fn forward_with_probs(&self, x: &Tensor, motion: &Tensor, reference: &Tensor) -> Result<(Tensor, BlockProbs)> {
        let (_, _, h, w) = x.dims4()?;
        let tokens = self.norm.forward(&to_tokens(x)?)?;
        let (mixed, probs) = match &self.conditioning {
            Conditioning::Sequential { motion: m, appearance: a } => {
                let (m1, pm) = motion_cross_attention(&tokens, motion, m)?;
                let (m2, pa) = appearance_cross_attention(&m1, reference, a)?;
                (m2, BlockProbs { motion: Some(pm), appearance: Some(pa), joint: None })
            }
            Conditioning::Fused { joint } => {
                let ctx = Tensor::cat(&[motion, reference], 1)?;
                let (out, p) = joint.forward_with_probs(&tokens, &ctx, None)?;
                ((&tokens + out)?, BlockProbs { motion: None, appearance: None, joint: Some(p) })
            }
        };
        let ff = self.ff_out.forward(&self.ff_in.forward(&self.ff_norm.forward(&mixed)?)?.silu()?)?;
        let y = self.proj.forward(&(mixed + ff)?)?;
        Ok(((x + from_tokens(&y, h, w)?)?, probs))
    }

    /// Number of distinct attention contexts the block consumes.
    pub fn context_count(&self) -> usize {
        match self.conditioning {
            Conditioning::Sequential { .. } => 2,
            Conditioning::Fused { .. } => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResBlock {
    pub norm1: GroupNorm,
    pub conv1: Conv2d,
    pub time: Linear,
    pub norm2: GroupNorm,
    pub conv2: Conv2d,
    pub skip: Option<Conv2d>,
}

impl ResBlock {
    fn new(b: &mut ParamBuilder, cin: usize, cout: usize, cfg: &FrameGenConfig) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(&mut b.sub("norm1"), cfg.groups, cin)?,
            conv1: Conv2d::new(&mut b.sub("conv1"), cin, cout, 3, 1, 1)?,
            time: Linear::new(&mut b.sub("time"), cfg.time_dim, cout, true)?,
            norm2: GroupNorm::new(&mut b.sub("norm2"), cfg.groups, cout)?,
            conv2: Conv2d::new(&mut b.sub("conv2"), cout, cout, 3, 1, 1)?,
            skip: if cin != cout { Some(Conv2d::new(&mut b.sub("skip"), cin, cout, 1, 1, 0)?) } else { None },
        })
    }

    fn forward(&self, x: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu()?)?;
        let (b, c, _, _) = h.dims4()?;
        let h = h.broadcast_add(&self.time.forward(&temb.silu()?)?.reshape((b, c, 1, 1))?)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu()?)?;
        let skip = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((skip + h)?)
    }
}

/// The latent UNet: one downsample, a bottleneck, one upsample with a skip
/// connection, and an attention block at each resolution.
#[derive(Debug, Clone)]
pub struct FrameDenoiser {
    pub config: FrameGenConfig,
    pub time_in: Linear,
    pub time_out: Linear,
    pub motion_proj: Linear,
    pub reference_proj: Linear,
    pub conv_in: Conv2d,
    pub down_res: ResBlock,
    pub down_attn: FrameAttentionBlock,
    pub downsample: Conv2d,
    pub mid_res: ResBlock,
    pub mid_attn: FrameAttentionBlock,
    pub upsample: Conv2d,
    pub up_res: ResBlock,
    pub up_attn: FrameAttentionBlock,
    pub out_norm: GroupNorm,
    pub conv_out: Conv2d,
}

/// Attention weights from every block of one forward pass.
#[derive(Debug, Clone)]
pub struct UnetProbs {
    pub blocks: Vec<BlockProbs>,
}

impl FrameDenoiser {
    pub fn new(b: &mut ParamBuilder, config: FrameGenConfig) -> Result<Self> {
        config.validate()?;
        let (c, d, cc, te) = (config.channels, config.latent_channels, config.context_dim, config.time_dim);
        let cfg = &config;
        Ok(Self {
            time_in: Linear::new(&mut b.sub("time_in"), te, te, true)?,
            time_out: Linear::new(&mut b.sub("time_out"), te, te, true)?,
            motion_proj: Linear::new(&mut b.sub("motion_proj"), cfg.motion_dim(), cc, true)?,
            reference_proj: Linear::new(&mut b.sub("reference_proj"), d, cc, true)?,
            conv_in: Conv2d::new(&mut b.sub("conv_in"), d, c, 3, 1, 1)?,
            down_res: ResBlock::new(&mut b.sub("down_res"), c, c, cfg)?,
            down_attn: FrameAttentionBlock::new(&mut b.sub("down_attn"), c, cfg)?,
            downsample: Conv2d::new(&mut b.sub("downsample"), c, 2 * c, 4, 2, 1)?,
            mid_res: ResBlock::new(&mut b.sub("mid_res"), 2 * c, 2 * c, cfg)?,
            mid_attn: FrameAttentionBlock::new(&mut b.sub("mid_attn"), 2 * c, cfg)?,
            upsample: Conv2d::new(&mut b.sub("upsample"), 2 * c, c, 3, 1, 1)?,
            up_res: ResBlock::new(&mut b.sub("up_res"), 2 * c, c, cfg)?,
            up_attn: FrameAttentionBlock::new(&mut b.sub("up_attn"), c, cfg)?,
            out_norm: GroupNorm::new(&mut b.sub("out_norm"), cfg.groups, c)?,
            conv_out: Conv2d::new(&mut b.sub("conv_out"), c, d, 3, 1, 1)?,
            config,
        })
    }

    pub fn attention_blocks(&self) -> [&FrameAttentionBlock; 3] {
        [&self.down_attn, &self.mid_attn, &self.up_attn]
    }

    /// Single motion token `(B, 1, Cc)` from `[beta | p]` rows `(B, D_beta + D_p)`.
    pub fn motion_token(&self, motion: &Tensor) -> Result<Tensor> {
        let (_, m) = motion.dims2()?;
        ensure!(m == self.config.motion_dim(), "motion width {m} != {}", self.config.motion_dim());
        Ok(self.motion_proj.forward(motion)?.unsqueeze(1)?)
    }

    /// Reference tokens `(B, h*w, Cc)` from the reference latent `(B, d, h, w)`.
    pub fn reference_tokens(&self, reference: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = reference.dims4()?;
        let tok = self.reference_proj.forward(&to_tokens(reference)?)?;
        if self.config.reference_positions {
            Ok(tok.broadcast_add(&grid_positional_encoding(h, w, self.config.context_dim)?)?)
        } else {
            Ok(tok)
        }
    }

    fn time_embedding(&self, ts: &[usize]) -> Result<Tensor> {
        let te = self.config.time_dim;
        let raw: Vec<f64> = ts.iter().flat_map(|&t| tensor::sinusoidal(t as f64, te)).collect();
        let raw = tensor::from_vec(raw, (ts.len(), te))?;
        self.time_out.forward(&self.time_in.forward(&raw)?.silu()?)
    }

    /// `j_t: (B, d, h, w)`, `motion: (B, D_beta + D_p)`, `reference: (B, d, h, w)`.
    pub fn forward(&self, j_t: &Tensor, ts: &[usize], motion: &Tensor, reference: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_probs(j_t, ts, motion, reference)?.0)
    }

    pub fn forward_with_probs(
        &self,
        j_t: &Tensor,
        ts: &[usize],
        motion: &Tensor,
        reference: &Tensor,
    ) -> Result<(Tensor, UnetProbs)> {
        let (b, d, h, w) = j_t.dims4()?;
        ensure!(d == self.config.latent_channels, "latent has {d} channels, expected {}", self.config.latent_channels);
        ensure!(h % 2 == 0 && w % 2 == 0, "latent side {h} must be even");
        ensure!(ts.len() == b, "need {b} timesteps, got {}", ts.len());
        ensure!(reference.dims() == j_t.dims(), "reference latent shape {:?} != {:?}", reference.dims(), j_t.dims());
        ensure!(motion.dims()[0] == b, "motion batch {} != {b}", motion.dims()[0]);
        let temb = self.time_embedding(ts)?;
        let mtok = self.motion_token(motion)?;
        let rtok = self.reference_tokens(reference)?;
        let mut probs = Vec::with_capacity(3);

        let h0 = self.conv_in.forward(j_t)?;
        let h1 = self.down_res.forward(&h0, &temb)?;
        let (h1, p) = self.down_attn.forward_with_probs(&h1, &mtok, &rtok)?;
        probs.push(p);
        let h2 = self.downsample.forward(&h1)?;
        let h2 = self.mid_res.forward(&h2, &temb)?;
        let (h2, p) = self.mid_attn.forward_with_probs(&h2, &mtok, &rtok)?;
        probs.push(p);
        let up = self.upsample.forward(&h2.upsample_nearest2d(h, w)?)?;
        let h3 = self.up_res.forward(&Tensor::cat(&[&up, &h1], 1)?, &temb)?;
        let (h3, p) = self.up_attn.forward_with_probs(&h3, &mtok, &rtok)?;
        probs.push(p);
        let out = self.conv_out.forward(&self.out_norm.forward(&h3)?.silu()?)?;
        Ok((out, UnetProbs { blocks: probs }))
    }

    /// Clean-latent prediction for one frame.
    pub fn denoise_frame(
        &self,
        j_t: &LatentImage,
        t: usize,
        beta: &[f64],
        pose: &[f64],
        reference: &LatentImage,
    ) -> Result<LatentImage> {
        ensure!(
            beta.len() == self.config.exp_dim && pose.len() == self.config.pose_dim,
            "coefficient widths ({}, {}) != ({}, {})",
            beta.len(),
            pose.len(),
            self.config.exp_dim,
            self.config.pose_dim
        );
        let motion: Vec<f64> = beta.iter().chain(pose).copied().collect();
        let motion = tensor::from_vec(motion, (1, self.config.motion_dim()))?;
        let out = self.forward(&j_t.values.unsqueeze(0)?, &[t], &motion, &reference.values.unsqueeze(0)?)?;
        LatentImage::new(out.squeeze(0)?)
    }
}

#[derive(Debug, Clone)]
pub struct FrameNet {
    pub denoiser: FrameDenoiser,
    pub params: ParamStore,
}

impl FrameNet {
    fn build(config: FrameGenConfig, mut params: ParamStore, rng: Option<&mut Rng>) -> Result<Self> {
        let denoiser = {
            let mut b = match rng {
                Some(r) => ParamBuilder::init(&mut params, r),
                None => ParamBuilder::load(&mut params),
            };
            FrameDenoiser::new(&mut b, config)?
        };
        Ok(Self { denoiser, params })
    }

    pub fn init(config: FrameGenConfig, seed: u64) -> Result<Self> {
        Self::build(config, ParamStore::new(), Some(&mut tensor::rng(seed)))
    }

    pub fn from_params(config: FrameGenConfig, params: ParamStore) -> Result<Self> {
        Self::build(config, params, None)
    }
}

/// Clean-latent regression loss on a batch noised at `ts` with `eps`.
pub fn frame_loss(
    denoiser: &FrameDenoiser,
    j0: &Tensor,
    ts: &[usize],
    eps: &Tensor,
    motion: &Tensor,
    reference: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let j_t = diffcore::forward_diffuse_batch(j0, ts, eps, schedule)?;
    diffcore::x0_loss(j0, &denoiser.forward(&j_t, ts, motion, reference)?)
}

fn check_sequences(betas: &CoeffSequence, poses: &CoeffSequence) -> Result<usize> {
    ensure!(
        betas.frames() == poses.frames(),
        "expression has {} frames, pose has {}",
        betas.frames(),
        poses.frames()
    );
    ensure!(betas.frames() >= 1, "need at least one frame");
    Ok(betas.frames())
}

#[allow(clippy::too_many_arguments)]
fn sample_one(
    i: usize,
    motion: &Tensor,
    reference: &LatentImage,
    denoiser: &FrameDenoiser,
    codec: &Codec,
    schedule: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<Frame> {
    let row = motion.narrow(0, i, 1)?;
    let refb = reference.values.unsqueeze(0)?;
    let j0 = diffcore::sample(
        |x, t| Ok(denoiser.forward(&x.unsqueeze(0)?, &[t], &row, &refb)?.squeeze(0)?),
        reference.values.shape().clone(),
        schedule,
        steps,
        0.0,
        derive_seed(seed, i as u64),
    )?;
    codec.decode(reference, &LatentImage::new(j0)?)
}

fn motion_rows(betas: &CoeffSequence, poses: &CoeffSequence) -> Result<Tensor> {
    Ok(Tensor::cat(&[&betas.values, &poses.values], D::Minus1)?)
}

/// Generates one frame per coefficient row, serially. Frame `i` uses the
/// sampling seed `derive_seed(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn generate_frames(
    betas: &CoeffSequence,
    poses: &CoeffSequence,
    reference: &Frame,
    denoiser: &FrameDenoiser,
    codec: &Codec,
    schedule: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<Vec<Frame>> {
    let f = check_sequences(betas, poses)?;
    let motion = motion_rows(betas, poses)?;
    let x = codec.encode(reference)?;
    (0..f).map(|i| sample_one(i, &motion, &x, denoiser, codec, schedule, steps, seed)).collect()
}

/// Same frames as [`generate_frames`], computed on the rayon pool.
#[allow(clippy::too_many_arguments)]
pub fn generate_frames_parallel(
    betas: &CoeffSequence,
    poses: &CoeffSequence,
    reference: &Frame,
    denoiser: &FrameDenoiser,
    codec: &Codec,
    schedule: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<Vec<Frame>> {
    let f = check_sequences(betas, poses)?;
    let motion = motion_rows(betas, poses)?;
    let x = codec.encode(reference)?;
    (0..f)
        .into_par_iter()
        .map(|i| sample_one(i, &motion, &x, denoiser, codec, schedule, steps, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latentcodec::CodecConfig;
    use crate::motiongen::CoeffKind;
    use crate::tensor::{randn, rng, to_vec};

    fn tiny_config() -> FrameGenConfig {
        FrameGenConfig { channels: 8, context_dim: 8, heads: 2, groups: 2, time_dim: 8, ..FrameGenConfig::new(4, 3, 2) }
    }

    fn inputs(seed: u64) -> (Tensor, Tensor, Tensor) {
        let mut r = rng(seed);
        (
            randn((2, 4, 4, 4), &mut r).unwrap(),
            randn((2, 5), &mut r).unwrap(),
            randn((2, 4, 4, 4), &mut r).unwrap(),
        )
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        let (a, b) = (to_vec(a).unwrap(), to_vec(b).unwrap());
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    /// Naive softmax attention over explicit loops, one batch element.
    fn naive_attention(q_in: &[Vec<f64>], ctx: &[Vec<f64>], attn: &CrossAttention) -> Vec<Vec<f64>> {
        let wq = attn.q.weight.as_tensor().to_vec2::<f64>().unwrap();
        let wk = attn.k.weight.as_tensor().to_vec2::<f64>().unwrap();
        let wv = attn.v.weight.as_tensor().to_vec2::<f64>().unwrap();
        let wo = attn.out.weight.as_tensor().to_vec2::<f64>().unwrap();
        let proj = |x: &[f64], w: &[Vec<f64>]| -> Vec<f64> {
            (0..w[0].len()).map(|o| (0..x.len()).map(|i| x[i] * w[i][o]).sum()).collect()
        };
        let inner = wq[0].len();
        let dh = inner / attn.heads;
        let qs: Vec<Vec<f64>> = q_in.iter().map(|x| proj(x, &wq)).collect();
        let ks: Vec<Vec<f64>> = ctx.iter().map(|x| proj(x, &wk)).collect();
        let vs: Vec<Vec<f64>> = ctx.iter().map(|x| proj(x, &wv)).collect();
        let mut out = Vec::new();
        for q in &qs {
            let mut mixed = vec![0.0; inner];
            for h in 0..attn.heads {
                let r = h * dh..(h + 1) * dh;
                let scores: Vec<f64> = ks
                    .iter()
                    .map(|k| r.clone().map(|i| q[i] * k[i]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for (j, s) in scores.iter().enumerate() {
                    let p = (s - m).exp() / z;
                    for i in r.clone() {
                        mixed[i] += p * vs[j][i];
                    }
                }
            }
            out.push(proj(&mixed, &wo));
        }
        out
    }

    fn rows(t: &Tensor) -> Vec<Vec<f64>> {
        t.squeeze(0).unwrap().to_vec2::<f64>().unwrap()
    }

    #[test]
    fn motion_attention_matches_oracle_and_is_residual_identity_for_zero_motion() {
        let net = FrameNet::init(tiny_config(), 1).unwrap();
        let block = &net.denoiser.down_attn;
        let Conditioning::Sequential { motion: attn, .. } = &block.conditioning else { panic!() };
        let mut r = rng(2);
        let feats = randn((1, 4, 8), &mut r).unwrap(); // 2x2 grid, 8 channels
        let motion = randn((1, 5), &mut r).unwrap();
        let token = net.denoiser.motion_token(&motion).unwrap();
        let (m1, probs) = motion_cross_attention(&feats, &token, attn).unwrap();
        assert!(to_vec(&probs).unwrap().iter().all(|&p| p == 1.0));
        let naive = naive_attention(&rows(&feats), &rows(&token), attn);
        for (i, row) in rows(&m1).iter().enumerate() {
            for c in 0..8 {
                assert!((row[c] - rows(&feats)[i][c] - naive[i][c]).abs() < 1e-10);
            }
        }
        let zero = net.denoiser.motion_token(&tensor::zeros((1, 5)).unwrap()).unwrap();
        let (same, _) = motion_cross_attention(&feats, &zero, attn).unwrap();
        assert_eq!(max_diff(&same, &feats), 0.0);
    }

    #[test]
    fn appearance_attention_matches_oracle() {
        let net = FrameNet::init(tiny_config(), 3).unwrap();
        let Conditioning::Sequential { appearance: attn, .. } = &net.denoiser.mid_attn.conditioning else { panic!() };
        let mut r = rng(4);
        let feats = randn((1, 4, 16), &mut r).unwrap();
        let reference = randn((1, 4, 2, 2), &mut r).unwrap();
        let toks = net.denoiser.reference_tokens(&reference).unwrap();
        let (m2, probs) = appearance_cross_attention(&feats, &toks, attn).unwrap();
        let sums = to_vec(&probs.sum(D::Minus1).unwrap()).unwrap();
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12));
        let naive = naive_attention(&rows(&feats), &rows(&toks), attn);
        for (i, row) in rows(&m2).iter().enumerate() {
            for c in 0..16 {
                assert!((row[c] - rows(&feats)[i][c] - naive[i][c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_reference_without_positions_gives_uniform_output() {
        let cfg = FrameGenConfig { reference_positions: false, ..tiny_config() };
        let net = FrameNet::init(cfg, 5).unwrap();
        let Conditioning::Sequential { appearance: attn, .. } = &net.denoiser.down_attn.conditioning else { panic!() };
        let reference = Tensor::ones((1, 4, 2, 2), tensor::DTYPE, &tensor::DEVICE).unwrap();
        let toks = net.denoiser.reference_tokens(&reference).unwrap();
        let feats = randn((1, 4, 8), &mut rng(6)).unwrap();
        let (out, _) = attn.forward_with_probs(&feats, &toks, None).unwrap();
        let out = rows(&out);
        for row in &out[1..] {
            assert!(row.iter().zip(&out[0]).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn grid_encoding_layout() {
        let pe = grid_positional_encoding(2, 3, 4).unwrap().to_vec2::<f64>().unwrap();
        assert_eq!(pe.len(), 6);
        // Token (1, 2): row code sinusoidal(1, 2), column code sinusoidal(2, 2).
        let expect: Vec<f64> = tensor::sinusoidal(1.0, 2).into_iter().chain(tensor::sinusoidal(2.0, 2)).collect();
        assert_eq!(pe[5], expect);
    }

    #[test]
    fn forward_shapes_and_probabilities() {
        let net = FrameNet::init(tiny_config(), 7).unwrap();
        let (j, m, x) = inputs(8);
        let (out, probs) = net.denoiser.forward_with_probs(&j, &[3, 900], &m, &x).unwrap();
        assert_eq!(out.dims(), j.dims());
        for bp in &probs.blocks {
            for p in [&bp.motion, &bp.appearance].into_iter().flatten() {
                let v = to_vec(&p.sum(D::Minus1).unwrap()).unwrap();
                assert!(v.iter().all(|s| (s - 1.0).abs() < 1e-6));
                assert!(to_vec(p).unwrap().iter().all(|&q| q >= 0.0));
            }
        }
        assert_eq!(to_vec(&out).unwrap(), to_vec(&net.denoiser.forward(&j, &[3, 900], &m, &x).unwrap()).unwrap());
    }

    #[test]
    fn zeroed_attention_paths_decouple_conditions() {
        let net = FrameNet::init(tiny_config(), 9).unwrap();
        let (j, m, x) = inputs(10);
        let (_, m2, x2) = inputs(11);
        let d = &net.denoiser;
        let base = d.forward(&j, &[50, 50], &m, &x).unwrap();
        assert!(max_diff(&base, &d.forward(&j, &[50, 50], &m, &x2).unwrap()) > 1e-6);
        assert!(max_diff(&base, &d.forward(&j, &[50, 50], &m2, &x).unwrap()) > 1e-6);

        let saved = net.params.deep_copy().unwrap();
        for blk in ["down_attn", "mid_attn", "up_attn"] {
            net.params.zero_prefix(&format!("{blk}.appearance.out")).unwrap();
        }
        let base = d.forward(&j, &[50, 50], &m, &x).unwrap();
        assert_eq!(max_diff(&base, &d.forward(&j, &[50, 50], &m, &x2).unwrap()), 0.0);

        for (name, var) in saved.iter() {
            net.params.assign(name, var.as_tensor()).unwrap();
        }
        for blk in ["down_attn", "mid_attn", "up_attn"] {
            net.params.zero_prefix(&format!("{blk}.motion.out")).unwrap();
        }
        let base = d.forward(&j, &[50, 50], &m, &x).unwrap();
        assert_eq!(max_diff(&base, &d.forward(&j, &[50, 50], &m2, &x).unwrap()), 0.0);
    }

    #[test]
    fn fused_arm_differs_structurally() {
        let full = FrameNet::init(tiny_config(), 1).unwrap();
        let fused = FrameNet::init(FrameGenConfig { concat_conditions: true, ..tiny_config() }, 1).unwrap();
        assert!(full.denoiser.attention_blocks().iter().all(|b| b.context_count() == 2));
        assert!(fused.denoiser.attention_blocks().iter().all(|b| b.context_count() == 1));
        assert!(fused.params.names().iter().all(|n| !n.contains(".motion.") && !n.contains(".appearance.")));
        let (j, m, x) = inputs(12);
        let (out, probs) = fused.denoiser.forward_with_probs(&j, &[1, 2], &m, &x).unwrap();
        assert_eq!(out.dims(), j.dims());
        // One motion token plus 16 reference tokens in a single context.
        assert_eq!(probs.blocks[0].joint.as_ref().unwrap().dims()[3], 17);
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let j0 = randn((2, 4, 4, 4), &mut rng(13)).unwrap();
        assert_eq!(tensor::scalar(&diffcore::x0_loss(&j0, &j0).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn generation_contract() {
        let codec = Codec::init(CodecConfig { latent_channels: 4, stages: 2, channels: 4 }, 0).unwrap();
        let net = FrameNet::init(tiny_config(), 2).unwrap();
        let schedule = diffcore::build_schedule(50, 1e-3, 2e-2).unwrap();
        let mut r = rng(3);
        let betas = CoeffSequence::new(randn((3, 3), &mut r).unwrap(), CoeffKind::Expression).unwrap();
        let poses = CoeffSequence::new(randn((3, 2), &mut r).unwrap(), CoeffKind::Pose).unwrap();
        let reference = Frame::new(crate::nn::sigmoid(&randn((3, 16, 16), &mut r).unwrap()).unwrap()).unwrap();
        let run = |par: bool| {
            let g = if par { generate_frames_parallel } else { generate_frames };
            g(&betas, &poses, &reference, &net.denoiser, &codec, &schedule, 4, 11).unwrap()
        };
        let a = run(false);
        assert_eq!(a.len(), 3);
        let b = run(true);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(to_vec(&x.pixels).unwrap(), to_vec(&y.pixels).unwrap());
        }
        let one = CoeffSequence::new(betas.values.narrow(0, 0, 1).unwrap(), CoeffKind::Expression).unwrap();
        assert!(generate_frames(&one, &poses, &reference, &net.denoiser, &codec, &schedule, 2, 0).is_err());
        let p1 = CoeffSequence::new(poses.values.narrow(0, 0, 1).unwrap(), CoeffKind::Pose).unwrap();
        assert_eq!(generate_frames(&one, &p1, &reference, &net.denoiser, &codec, &schedule, 2, 0).unwrap().len(), 1);
    }
}
