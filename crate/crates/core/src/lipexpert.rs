//! Lip-sync scorer.
//!
//! Two small perceptrons embed a window of mouth-vertex motion and the
//! matching window of audio features; their cosine similarity, clamped to
//! `[SYNC_FLOOR, 1]`, is the sync probability and `-ln` of it is the sync
//! loss. The scorer is trained contrastively on aligned versus time-shifted
//! windows and then frozen.

use candle_core::{Tensor, D};
use rand::Rng as _;

use crate::error::{ensure, Result};
use crate::face3d::{self, FaceBasis};
use crate::nn::{Adam, Linear, ParamBuilder, ParamStore};
use crate::tensor::{self, Rng};

/// Lower clamp on the sync probability so `-ln` stays finite.
pub const SYNC_FLOOR: f64 = 1e-6;
pub const DEFAULT_EPS: f64 = 1e-8;
pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_EMBED: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertConfig {
    /// `3 * |mouth|`
    pub mouth_dim: usize,
    pub audio_dim: usize,
    /// Frames per window.
    pub window: usize,
    pub hidden: usize,
    pub embed: usize,
    /// Multiplies mouth displacements before the first layer.
    pub mouth_scale: f64,
}

impl ExpertConfig {
    pub fn new(mouth_dim: usize, audio_dim: usize) -> Self {
        Self { mouth_dim, audio_dim, window: DEFAULT_WINDOW, hidden: 64, embed: DEFAULT_EMBED, mouth_scale: 1.0 }
    }
}

/// `out(tanh(hidden(x)))`.
#[derive(Debug, Clone)]
pub struct Perceptron {
    pub hidden: Linear,
    pub out: Linear,
}

impl Perceptron {
    fn new(b: &mut ParamBuilder, input: usize, hidden: usize, out: usize) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(&mut b.sub("hidden"), input, hidden, true)?,
            out: Linear::new(&mut b.sub("out"), hidden, out, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.out.forward(&self.hidden.forward(x)?.tanh()?)
    }
}

#[derive(Debug, Clone)]
pub struct SyncExpert {
    pub config: ExpertConfig,
    pub mouth: Perceptron,
    pub audio: Perceptron,
    pub params: ParamStore,
}

impl SyncExpert {
    fn build(config: ExpertConfig, mut params: ParamStore, rng: Option<&mut Rng>) -> Result<Self> {
        ensure!(config.window >= 1 && config.embed >= 1, "window and embedding must be positive");
        let c = &config;
        let (mouth, audio) = {
            let mut b = match rng {
                Some(r) => ParamBuilder::init(&mut params, r),
                None => ParamBuilder::load(&mut params),
            };
            (
                Perceptron::new(&mut b.sub("mouth"), c.mouth_dim * c.window, c.hidden, c.embed)?,
                Perceptron::new(&mut b.sub("audio"), c.audio_dim * c.window, c.hidden, c.embed)?,
            )
        };
        Ok(Self { config, mouth, audio, params })
    }

    pub fn init(config: ExpertConfig, seed: u64) -> Result<Self> {
        Self::build(config, ParamStore::new(), Some(&mut tensor::rng(seed)))
    }

    pub fn from_params(config: ExpertConfig, params: ParamStore) -> Result<Self> {
        Self::build(config, params, None)
    }

    /// Embeds flattened mouth windows `(n, window * mouth_dim)` or one `(window, mouth_dim)` window.
    pub fn embed_mouth(&self, windows: &Tensor) -> Result<Tensor> {
        let x = flatten_windows(windows, self.config.window * self.config.mouth_dim)?;
        self.mouth.forward(&(x * self.config.mouth_scale)?)
    }

    /// Embeds flattened normalized-audio windows `(n, window * audio_dim)` or one `(window, audio_dim)` window.
    pub fn embed_audio(&self, windows: &Tensor) -> Result<Tensor> {
        let x = flatten_windows(windows, self.config.window * self.config.audio_dim)?;
        self.audio.forward(&x)
    }

    /// Per-window sync probabilities `(n,)` for a mouth-displacement sequence
    /// `(F, mouth_dim)` against normalized audio `(F, audio_dim)`, with the audio
    /// shifted by `offset` frames (0 = aligned).
    pub fn window_probabilities(&self, mouth: &Tensor, audio: &Tensor, offset: isize) -> Result<Tensor> {
        let (f, _) = mouth.dims2()?;
        let (fa, _) = audio.dims2()?;
        ensure!(f == fa, "mouth has {f} frames, audio has {fa}");
        let w = self.config.window;
        ensure!(f >= w, "sequence of {f} frames is shorter than the {w}-frame window");
        let starts: Vec<(usize, usize)> = (0..=f - w)
            .filter_map(|s| {
                let s2 = s as isize + offset;
                (s2 >= 0 && s2 as usize + w <= f).then_some((s, s2 as usize))
            })
            .collect();
        ensure!(!starts.is_empty(), "offset {offset} leaves no window pairs in {f} frames");
        let ms: Vec<usize> = starts.iter().map(|p| p.0).collect();
        let as_: Vec<usize> = starts.iter().map(|p| p.1).collect();
        let v = self.embed_mouth(&gather_windows(mouth, &ms, w)?)?;
        let a = self.embed_audio(&gather_windows(audio, &as_, w)?)?;
        sync_probability_batch(&v, &a, DEFAULT_EPS)
    }

    /// Mean sync probability over all aligned windows.
    pub fn score(&self, mouth: &Tensor, audio: &Tensor) -> Result<f64> {
        tensor::scalar(&self.window_probabilities(mouth, audio, 0)?.mean_all()?)
    }

    pub fn score_shifted(&self, mouth: &Tensor, audio: &Tensor, offset: isize) -> Result<f64> {
        tensor::scalar(&self.window_probabilities(mouth, audio, offset)?.mean_all()?)
    }
}

fn flatten_windows(x: &Tensor, width: usize) -> Result<Tensor> {
    let n = x.elem_count();
    ensure!(n.is_multiple_of(width), "window data of {n} values is not a multiple of {width}");
    Ok(x.reshape((n / width, width))?)
}

/// Rows `s..s + w` of `seq` for each start, flattened to `(starts, w * C)`.
pub fn gather_windows(seq: &Tensor, starts: &[usize], w: usize) -> Result<Tensor> {
    let (f, c) = seq.dims2()?;
    ensure!(starts.iter().all(|&s| s + w <= f), "window exceeds sequence of {f} frames");
    let idx: Vec<u32> = starts.iter().flat_map(|&s| (s..s + w).map(|i| i as u32)).collect();
    let idx = Tensor::new(idx.as_slice(), &tensor::DEVICE)?;
    Ok(seq.index_select(&idx, 0)?.reshape((starts.len(), w * c))?)
}

/// `<v, a> / max(|v| |a|, eps)`, clamped to `[SYNC_FLOOR, 1]`.
pub fn sync_probability(v: &[f64], a: &[f64], eps: f64) -> Result<f64> {
    ensure!(v.len() == a.len(), "embedding sizes differ: {} vs {}", v.len(), a.len());
    ensure!(eps > 0.0, "eps must be positive");
    let dot: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((dot / (nv * na).max(eps)).clamp(SYNC_FLOOR, 1.0))
}

/// Row-wise [`sync_probability`] on the autodiff tape: `(n, E), (n, E) -> (n,)`.
pub fn sync_probability_batch(v: &Tensor, a: &Tensor, eps: f64) -> Result<Tensor> {
    tensor::same_shape(v, a, "sync_probability")?;
    let dot = (v * a)?.sum(D::Minus1)?;
    let nv = v.sqr()?.sum(D::Minus1)?.sqrt()?;
    let na = a.sqr()?.sum(D::Minus1)?.sqrt()?;
    let denom = (nv * na)?.maximum(eps)?;
    Ok((dot / denom)?.clamp(SYNC_FLOOR, 1.0)?)
}

/// `-ln(p)`.
pub fn sync_loss(p: f64) -> f64 {
    -p.ln()
}

/// Mean `-ln(P_sync)` over tensor entries.
pub fn sync_loss_tensor(p: &Tensor) -> Result<Tensor> {
    Ok(p.log()?.neg()?.mean_all()?)
}

/// Stage-one sync loss for predicted expressions `(F, D_beta)`.
///
/// Meshes come from `alpha` plus the predicted expressions; the scorer sees the
/// mouth vertices' displacement from that identity's neutral face. Audio
/// embeddings are detached since the scorer is frozen.
pub fn sequence_sync_loss(
    expert: &SyncExpert,
    basis: &FaceBasis,
    alpha: &Tensor,
    betas: &Tensor,
    audio: &Tensor,
) -> Result<Tensor> {
    let mouth = face3d::mouth_motion_sequence(basis, alpha, betas)?;
    let neutral = face3d::mouth_motion_sequence(basis, alpha, &betas.zeros_like()?)?.detach();
    let disp = (mouth - neutral)?;
    let p = expert.window_probabilities(&disp, &audio.detach(), 0)?;
    sync_loss_tensor(&p)
}

/// A clip as the scorer sees it.
#[derive(Debug, Clone)]
pub struct SyncClip {
    /// `(F, mouth_dim)` mouth displacement from neutral.
    pub mouth: Tensor,
    /// `(F, audio_dim)` normalized features.
    pub audio: Tensor,
}

#[derive(Debug, Clone)]
pub struct ExpertTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Smallest |shift| used for negative pairs.
    pub min_shift: usize,
    pub max_shift: usize,
    pub seed: u64,
}

impl Default for ExpertTrainConfig {
    fn default() -> Self {
        Self { steps: 400, learning_rate: 2e-3, min_shift: 3, max_shift: 8, seed: 0 }
    }
}

/// Contrastive training: aligned windows should score 1, shifted windows 0.
/// Returns the per-step loss history; `steps = 0` leaves parameters unchanged.
pub fn train_expert(expert: &SyncExpert, clips: &[SyncClip], cfg: &ExpertTrainConfig) -> Result<Vec<f64>> {
    ensure!(!clips.is_empty(), "need at least one clip");
    ensure!(cfg.min_shift >= 1 && cfg.min_shift <= cfg.max_shift, "bad shift range");
    let w = expert.config.window;
    for c in clips {
        let f = c.mouth.dims()[0];
        ensure!(f >= w + cfg.min_shift, "clip of {f} frames too short for a shifted pair");
    }
    let mut rng = tensor::rng(cfg.seed);
    let mut opt = Adam::new(expert.params.vars(), cfg.learning_rate)?;
    let mut history = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for clip in clips {
            pos.push(expert.window_probabilities(&clip.mouth, &clip.audio, 0)?);
            let f = clip.mouth.dims()[0];
            let max_shift = cfg.max_shift.min(f - w) as isize;
            let mut shift = rng.gen_range(cfg.min_shift as isize..=max_shift);
            if rng.gen_bool(0.5) {
                shift = -shift;
            }
            neg.push(expert.window_probabilities(&clip.mouth, &clip.audio, shift)?);
        }
        let pos = Tensor::cat(&pos, 0)?;
        let neg = Tensor::cat(&neg, 0)?.clamp(SYNC_FLOOR, 1.0 - SYNC_FLOOR)?;
        let loss = (sync_loss_tensor(&pos)? + neg.affine(-1.0, 1.0)?.log()?.neg()?.mean_all()?)?;
        history.push(tensor::scalar(&loss)?);
        opt.step(&loss)?;
    }
    Ok(history)
}
