//! Frame-aligned audio features and onset detection.
//!
//! Features are log energies of a mel-spaced triangular filterbank applied to
//! the Hann-windowed spectrum of each video frame's sample window. Row `i`
//! depends only on samples `[i * spf, (i + 1) * spf)` where `spf` is the
//! number of samples per video frame.

use std::path::Path;

use candle_core::Tensor;
use rand::Rng as _;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{ensure, invalid, Result};
use crate::tensor;
use crate::FPS;

pub const SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_BANDS: usize = 26;
/// Added to band energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-8;
pub const MIN_FREQ_HZ: f64 = 80.0;
pub const MAX_FREQ_HZ: f64 = 7600.0;
/// Onset threshold relative to the trailing mean energy.
pub const ONSET_RATIO: f64 = 1.5;
pub const ONSET_HISTORY: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        ensure!(sample_rate > 0, "sample rate must be positive");
        Ok(Self { samples, sample_rate })
    }

    pub fn samples_per_frame(&self) -> usize {
        self.sample_rate as usize / FPS
    }

    /// Whole video frames covered by the samples.
    pub fn frame_count(&self) -> usize {
        self.samples.len() / self.samples_per_frame().max(1)
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    fn frame_window(&self, i: usize) -> &[f64] {
        let spf = self.samples_per_frame();
        &self.samples[i * spf..(i + 1) * spf]
    }
}

#[derive(Debug, Clone)]
pub struct AudioFeatureSequence {
    /// `(F, D_a)`
    pub features: Tensor,
    pub frame_rate: usize,
}

impl AudioFeatureSequence {
    pub fn frames(&self) -> usize {
        self.features.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.features.dims()[1]
    }

    /// Features shifted so silence maps to 0 and scaled by the floor magnitude.
    pub fn normalized(&self) -> Result<Tensor> {
        let floor = LOG_FLOOR.ln();
        Ok(((&self.features - floor)? / floor.abs())?)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `bands + 2` mel-spaced edge frequencies; band `k` peaks at edge `k + 1`.
fn band_edges(bands: usize) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(MIN_FREQ_HZ), hz_to_mel(MAX_FREQ_HZ));
    (0..bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
        .collect()
}

/// Peak frequency of each filterbank band.
pub fn band_centers(bands: usize) -> Vec<f64> {
    band_edges(bands)[1..=bands].to_vec()
}

fn triangle(f: f64, lo: f64, mid: f64, hi: f64) -> f64 {
    if f <= lo || f >= hi {
        0.0
    } else if f <= mid {
        (f - lo) / (mid - lo)
    } else {
        (hi - f) / (hi - mid)
    }
}

struct Filterbank {
    n_fft: usize,
    window: Vec<f64>,
    /// Per band: (first bin, weights).
    filters: Vec<(usize, Vec<f64>)>,
}

impl Filterbank {
    fn new(spf: usize, sample_rate: u32, bands: usize) -> Self {
        let n_fft = spf.next_power_of_two();
        let window = (0..spf)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / spf as f64).cos())
            .collect();
        let edges = band_edges(bands);
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let filters = (0..bands)
            .map(|k| {
                let (lo, mid, hi) = (edges[k], edges[k + 1], edges[k + 2]);
                let first = (lo / bin_hz).floor() as usize;
                let last = ((hi / bin_hz).ceil() as usize).min(n_fft / 2);
                let w = (first..=last).map(|b| triangle(b as f64 * bin_hz, lo, mid, hi)).collect();
                (first, w)
            })
            .collect();
        Self { n_fft, window, filters }
    }

    fn band_energies(&self, planner: &mut FftPlanner<f64>, samples: &[f64]) -> Vec<f64> {
        let fft = planner.plan_fft_forward(self.n_fft);
        let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); self.n_fft];
        for (i, (&s, &w)) in samples.iter().zip(&self.window).enumerate() {
            buf[i] = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        let norm = samples.len() as f64;
        self.filters
            .iter()
            .map(|(first, w)| {
                w.iter()
                    .enumerate()
                    .map(|(j, wt)| wt * buf[first + j].norm_sqr() / norm)
                    .sum()
            })
            .collect()
    }
}

/// `F x D_a` log filterbank energies, one row per 1/25 s window.
pub fn extract_features(wave: &Waveform, frames: usize, bands: usize) -> Result<AudioFeatureSequence> {
    ensure!(frames >= 1 && bands >= 1, "need at least one frame and one band");
    ensure!(
        (wave.sample_rate as usize).is_multiple_of(FPS),
        "sample rate {} is not a multiple of {FPS}",
        wave.sample_rate
    );
    let spf = wave.samples_per_frame();
    ensure!(
        wave.samples.len() >= frames * spf,
        "waveform has {} samples, {frames} frames need {}",
        wave.samples.len(),
        frames * spf
    );
    let bank = Filterbank::new(spf, wave.sample_rate, bands);
    let mut planner = FftPlanner::new();
    let mut data = Vec::with_capacity(frames * bands);
    for i in 0..frames {
        data.extend(
            bank.band_energies(&mut planner, wave.frame_window(i))
                .into_iter()
                .map(|e| (e + LOG_FLOOR).ln()),
        );
    }
    Ok(AudioFeatureSequence {
        features: tensor::from_vec(data, (frames, bands))?,
        frame_rate: FPS,
    })
}

/// Mean squared amplitude of each whole frame window.
pub fn frame_energies(wave: &Waveform) -> Vec<f64> {
    (0..wave.frame_count())
        .map(|i| {
            let w = wave.frame_window(i);
            w.iter().map(|s| s * s).sum::<f64>() / w.len() as f64
        })
        .collect()
}

/// Frames where energy crosses above `ONSET_RATIO` times the mean of the
/// preceding `ONSET_HISTORY` frames. Only the first frame of each crossing
/// counts.
pub fn detect_audio_beats(wave: &Waveform) -> Vec<usize> {
    let energy = frame_energies(wave);
    let mut beats = Vec::new();
    let mut above_prev = false;
    for i in 0..energy.len() {
        let start = i.saturating_sub(ONSET_HISTORY);
        let history = &energy[start..i];
        let mean = if history.is_empty() {
            0.0
        } else {
            history.iter().sum::<f64>() / history.len() as f64
        };
        let above = energy[i] > 1e-12 && energy[i] > ONSET_RATIO * mean;
        if above && !above_prev {
            beats.push(i);
        }
        above_prev = above;
    }
    beats
}

/// A sound placed on the video-frame grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AudioEvent {
    /// Sinusoid filling frames `start_frame..start_frame + frames`.
    Tone { start_frame: usize, frames: usize, frequency: f64, amplitude: f64 },
    /// Short decaying pulse at the start of one frame window.
    Click { frame: usize, amplitude: f64 },
}

const CLICK_SAMPLES: usize = 48;

/// Renders events at 16 kHz. The seed only fixes tone phases.
pub fn synth_waveform(events: &[AudioEvent], duration_secs: f64, seed: u64) -> Result<Waveform> {
    ensure!(duration_secs > 0.0, "duration must be positive");
    let sr = SAMPLE_RATE as f64;
    let len = (duration_secs * sr).round() as usize;
    let spf = SAMPLE_RATE as usize / FPS;
    let mut samples = vec![0.0; len];
    let mut rng = tensor::rng(seed);
    for ev in events {
        match *ev {
            AudioEvent::Tone { start_frame, frames, frequency, amplitude } => {
                let phase = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
                let start = start_frame * spf;
                let end = ((start_frame + frames) * spf).min(len);
                for (n, s) in samples.iter_mut().enumerate().take(end).skip(start) {
                    let t = (n - start) as f64 / sr;
                    *s += amplitude * (2.0 * std::f64::consts::PI * frequency * t + phase).sin();
                }
            }
            AudioEvent::Click { frame, amplitude } => {
                let start = frame * spf;
                for n in 0..CLICK_SAMPLES {
                    if let Some(s) = samples.get_mut(start + n) {
                        *s += amplitude * (-(n as f64) / 6.0).exp();
                    }
                }
            }
        }
    }
    Waveform::new(samples, SAMPLE_RATE)
}

/// Rounds every sample to the 16-bit grid the WAV writer uses.
pub fn quantize_16bit(wave: &Waveform) -> Waveform {
    Waveform {
        samples: wave
            .samples
            .iter()
            .map(|&s| (s.clamp(-1.0, 1.0) * 32767.0).round() / 32767.0)
            .collect(),
        sample_rate: wave.sample_rate,
    }
}

/// Reads a mono 16-bit PCM WAV at 16 kHz; any other layout is rejected.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
        || spec.sample_rate != SAMPLE_RATE
    {
        return Err(invalid!(
            "{}: unsupported WAV layout ({} ch, {} bit, {:?}, {} Hz); need mono 16-bit PCM at 16 kHz",
            path.as_ref().display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format,
            spec.sample_rate
        ));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32767.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, SAMPLE_RATE)
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    ensure!(wave.sample_rate == SAMPLE_RATE, "only 16 kHz output is supported");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for &s in &wave.samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}
