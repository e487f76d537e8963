//! Procedural talking-head corpus.
//!
//! Each clip is a train of short tones. Expressions are a fixed linear map of
//! the normalized audio features (only the leading, mouth-dominant
//! coefficients respond), head pose eases between random-walk knots placed
//! at the audio onsets, and frames are rasterized discs: head position and
//! size follow the pose, mouth opening follows the mouth-vertex displacement
//! the expressions produce.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;

use super::coeffio;
use super::config::{lookup, parse_key_values, ModelDims};
use crate::audiofeat::{self, AudioEvent, AudioFeatureSequence, Waveform};
use crate::error::{ensure, Error, Result};
use crate::face3d::{self, FaceBasis, POSE_DIM};
use crate::latentcodec::{self, Frame};
use crate::motiongen::{CoeffKind, CoeffSequence};
use crate::tensor::{self, derive_seed};
use crate::FPS;

/// Seed of the audio-to-expression response shared by every corpus.
pub const RESPONSE_SEED: u64 = 0xa0d1_0b37;
/// Expression coefficients that respond to audio; the rest stay at rest.
pub const ACTIVE_EXPRESSIONS: usize = 8;
const RESPONSE_GAIN: f64 = 1.5;
const POSE_STEP: [f64; POSE_DIM] = [0.12, 0.12, 0.08, 0.05, 0.05, 0.05];

/// The `(D_beta, D_a)` matrix mapping normalized audio rows to expressions.
pub fn expression_response(exp_dim: usize, audio_dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut rng = tensor::rng(RESPONSE_SEED);
    let scale = RESPONSE_GAIN / (audio_dim as f64).sqrt();
    Ok((0..exp_dim)
        .map(|k| {
            let row = tensor::normal_vec(audio_dim, &mut rng);
            if k < ACTIVE_EXPRESSIONS {
                row.into_iter().map(|v| v * scale).collect()
            } else {
                vec![0.0; audio_dim]
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Clip {
    pub waveform: Waveform,
    pub audio: AudioFeatureSequence,
    pub betas: CoeffSequence,
    pub poses: CoeffSequence,
    pub frames: Vec<Frame>,
    pub alpha: Vec<f64>,
    pub audio_beats: Vec<usize>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn alpha_tensor(&self) -> Result<candle_core::Tensor> {
        tensor::from_vec(self.alpha.clone(), self.alpha.len())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub clips: Vec<Clip>,
    pub frames: usize,
    pub seed: u64,
}

/// Random tone train covering `frames` frames.
pub fn random_events(frames: usize, rng: &mut tensor::Rng) -> Vec<AudioEvent> {
    let mut events = Vec::new();
    let mut t = rng.gen_range(0..3);
    while t < frames {
        let len = rng.gen_range(2..=6);
        let frequency = (150f64.ln() + rng.gen::<f64>() * (3500f64.ln() - 150f64.ln())).exp();
        let amplitude = rng.gen_range(0.15..0.6);
        events.push(AudioEvent::Tone { start_frame: t, frames: len, frequency, amplitude });
        t += len + rng.gen_range(1..=4);
    }
    events
}

/// Knots at frame 0, every audio beat and the last frame; values follow a
/// damped random walk and are joined with cosine easing, so rotation speed
/// vanishes at each knot.
pub fn pose_from_beats(frames: usize, beats: &[usize], rng: &mut tensor::Rng) -> Vec<Vec<f64>> {
    let mut knots = vec![0];
    knots.extend(beats.iter().copied().filter(|&b| b > 0 && b + 1 < frames));
    if frames > 1 {
        knots.push(frames - 1);
    }
    knots.dedup();
    let mut value: Vec<f64> = POSE_STEP.iter().map(|s| 0.5 * s * tensor::normal_vec(1, rng)[0]).collect();
    let mut values = vec![value.clone()];
    for _ in 1..knots.len() {
        let z = tensor::normal_vec(POSE_DIM, rng);
        value = value.iter().zip(&z).zip(POSE_STEP).map(|((v, n), s)| 0.7 * v + s * n).collect();
        values.push(value.clone());
    }
    let mut out = vec![values[0].clone(); frames];
    for w in 0..knots.len().saturating_sub(1) {
        let (a, b) = (knots[w], knots[w + 1]);
        for (i, row) in out.iter_mut().enumerate().take(b + 1).skip(a) {
            let u = (i - a) as f64 / (b - a) as f64;
            let e = (1.0 - (std::f64::consts::PI * u).cos()) / 2.0;
            *row = values[w].iter().zip(&values[w + 1]).map(|(p, q)| p + (q - p) * e).collect();
        }
    }
    out
}

fn coverage(signed_distance: f64) -> f64 {
    (0.5 - signed_distance).clamp(0.0, 1.0)
}

/// Rasterizes one frame. `openness` is the mouth half-height in 32-pixel units.
pub fn render_frame(size: usize, alpha: &[f64], pose: &[f64], openness: f64) -> Result<Frame> {
    ensure!(pose.len() == POSE_DIM, "pose needs {POSE_DIM} values");
    ensure!(alpha.len() >= 6, "identity needs at least 6 values");
    let s = size as f64 / 32.0;
    let half = size as f64 / 2.0;
    let cx = half + s * (8.0 * pose[1] + 6.0 * pose[3]);
    let cy = half + s * (8.0 * pose[0] + 6.0 * pose[4]);
    let radius = s * (10.0 + 3.0 * pose[5]).clamp(6.0, 14.0);
    let (sin, cos) = pose[2].sin_cos();
    let place = |dx: f64, dy: f64| (cx + s * (dx * cos - dy * sin), cy + s * (dx * sin + dy * cos));
    let skin: Vec<f64> = (0..3).map(|c| 0.6 + 0.2 * alpha[c].tanh()).collect();
    let back: Vec<f64> = (0..3).map(|c| 0.2 + 0.1 * alpha[3 + c].tanh()).collect();
    let eye = [0.08, 0.08, 0.12];
    let lips = [0.45, 0.08, 0.1];
    let eyes = [place(-3.5, -3.0), place(3.5, -3.0)];
    let mouth = place(0.0, 4.5);
    let (mw, mh) = (3.5 * s, (openness * s).clamp(0.3 * s, 5.0 * s));
    let mut data = vec![0.0; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let head = coverage(((px - cx).powi(2) + (py - cy).powi(2)).sqrt() - radius);
            let eye_cov = eyes
                .iter()
                .map(|(ex, ey)| coverage(((px - ex).powi(2) + (py - ey).powi(2)).sqrt() - 1.3 * s))
                .fold(0.0, f64::max);
            // Mouth ellipse in the head's rotated frame.
            let (dx, dy) = (px - mouth.0, py - mouth.1);
            let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
            let mouth_cov = coverage((((u / mw).powi(2) + (v / mh).powi(2)).sqrt() - 1.0) * mw.min(mh));
            for c in 0..3 {
                let mut val = back[c] + head * (skin[c] - back[c]);
                val += head * eye_cov * (eye[c] - val);
                val += head * mouth_cov * (lips[c] - val);
                data[c * size * size + y * size + x] = val;
            }
        }
    }
    Frame::new(tensor::from_vec(data, (3, size, size))?)?.quantized()
}

/// Mouth half-height from the expression's mouth-vertex displacement.
pub fn mouth_openness(displacement_norm: f64) -> f64 {
    0.4 + 4.0 * displacement_norm
}

/// Builds one clip from explicit audio events.
pub fn make_clip(
    events: &[AudioEvent],
    frames: usize,
    alpha: Vec<f64>,
    seed: u64,
    basis: &FaceBasis,
    dims: &ModelDims,
) -> Result<Clip> {
    ensure!(frames >= 1, "need at least one frame");
    ensure!(alpha.len() == basis.id_dim(), "identity has {} values, basis expects {}", alpha.len(), basis.id_dim());
    let wave = audiofeat::synth_waveform(events, frames as f64 / FPS as f64, derive_seed(seed, 0))?;
    clip_from_waveform(audiofeat::quantize_16bit(&wave), frames, alpha, seed, basis, dims)
}

fn clip_from_waveform(
    waveform: Waveform,
    frames: usize,
    alpha: Vec<f64>,
    seed: u64,
    basis: &FaceBasis,
    dims: &ModelDims,
) -> Result<Clip> {
    let audio = audiofeat::extract_features(&waveform, frames, dims.audio_bands)?;
    let norm = audio.normalized()?.to_vec2::<f64>()?;
    let response = expression_response(basis.exp_dim(), dims.audio_bands)?;
    let betas: Vec<f64> = norm
        .iter()
        .flat_map(|row| response.iter().map(move |r| r.iter().zip(row).map(|(a, b)| a * b).sum::<f64>()))
        .collect();
    let betas = CoeffSequence::new(tensor::from_vec(betas, (frames, basis.exp_dim()))?, CoeffKind::Expression)?;
    let audio_beats = audiofeat::detect_audio_beats(&waveform);
    let pose_rows = pose_from_beats(frames, &audio_beats, &mut tensor::rng(derive_seed(seed, 1)));
    let poses = CoeffSequence::new(tensor::from_vec(pose_rows.concat(), (frames, POSE_DIM))?, CoeffKind::Pose)?;
    let disp = face3d::mouth_displacement_sequence(basis, &betas.values)?.to_vec2::<f64>()?;
    let frames_out = disp
        .iter()
        .zip(&pose_rows)
        .map(|(d, p)| {
            let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            render_frame(dims.frame_size, &alpha, p, mouth_openness(n))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Clip { waveform, audio, betas, poses, frames: frames_out, alpha, audio_beats })
}

/// The face basis every corpus and model of these dimensions uses.
pub fn corpus_basis(dims: &ModelDims) -> Result<FaceBasis> {
    face3d::make_synthetic_basis(dims.vertices, dims.id_dim, dims.exp_dim, dims.mouth_fraction, dims.basis_seed)
}

pub fn make_corpus(n_clips: usize, frames: usize, seed: u64, basis: &FaceBasis, dims: &ModelDims) -> Result<SyntheticCorpus> {
    ensure!(n_clips >= 1, "need at least one clip");
    let clips = (0..n_clips)
        .map(|i| {
            let clip_seed = derive_seed(seed, i as u64);
            let mut rng = tensor::rng(clip_seed);
            let events = random_events(frames, &mut rng);
            let alpha = tensor::normal_vec(basis.id_dim(), &mut rng);
            make_clip(&events, frames, alpha, clip_seed, basis, dims)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCorpus { clips, frames, seed })
}

fn clip_stem(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("clip_{i:03}"))
}

pub fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("frame_{i:04}.ppm"))
}

/// Writes `corpus.txt`, and per clip a WAV, coefficient files, the identity
/// and a directory of PPM frames.
pub fn save_corpus(corpus: &SyntheticCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("corpus.txt"),
        format!("clips = {}\nframes = {}\nseed = {}\n", corpus.clips.len(), corpus.frames, corpus.seed),
    )?;
    for (i, clip) in corpus.clips.iter().enumerate() {
        let stem = clip_stem(dir, i);
        audiofeat::write_wav(stem.with_extension("wav"), &clip.waveform)?;
        coeffio::write_coeffs(&stem.with_extension("exp"), &clip.betas)?;
        coeffio::write_coeffs(&stem.with_extension("pose"), &clip.poses)?;
        let alpha = CoeffSequence::new(tensor::from_vec(clip.alpha.clone(), (1, clip.alpha.len()))?, CoeffKind::Identity)?;
        coeffio::write_coeffs(&stem.with_extension("id"), &alpha)?;
        fs::create_dir_all(&stem)?;
        for (j, frame) in clip.frames.iter().enumerate() {
            latentcodec::write_ppm(&frame_path(&stem, j), frame)?;
        }
    }
    Ok(())
}

pub fn load_corpus(dir: &Path, dims: &ModelDims) -> Result<SyntheticCorpus> {
    let meta = parse_key_values(&fs::read_to_string(dir.join("corpus.txt"))?)?;
    let (n, frames, seed): (usize, usize, u64) = (lookup(&meta, "clips")?, lookup(&meta, "frames")?, lookup(&meta, "seed")?);
    let clips = (0..n)
        .map(|i| {
            let stem = clip_stem(dir, i);
            let waveform = audiofeat::read_wav(stem.with_extension("wav"))?;
            let audio = audiofeat::extract_features(&waveform, frames, dims.audio_bands)?;
            let betas = coeffio::read_coeffs(&stem.with_extension("exp"))?;
            let poses = coeffio::read_coeffs(&stem.with_extension("pose"))?;
            let alpha = coeffio::read_coeffs(&stem.with_extension("id"))?.rows()?.concat();
            let frames_out = (0..frames)
                .map(|j| latentcodec::read_ppm(&frame_path(&stem, j)))
                .collect::<Result<Vec<_>>>()?;
            if betas.frames() != frames || poses.frames() != frames {
                return Err(Error::Parse(format!("clip {i}: coefficient rows do not match {frames} frames")));
            }
            let audio_beats = audiofeat::detect_audio_beats(&waveform);
            Ok(Clip { waveform, audio, betas, poses, frames: frames_out, alpha, audio_beats })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCorpus { clips, frames, seed })
}
