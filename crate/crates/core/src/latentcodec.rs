//! Frame encoder and two-latent decoder.
//!
//! The encoder is a strided convolution pyramid from RGB to `d` latent
//! channels at `1/f` resolution. The decoder receives the reference latent and
//! the content latent stacked along channels (`2d` inputs) and upsamples back to
//! an RGB frame squashed into `[0, 1]`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use candle_core::{Tensor, D};

use crate::error::{ensure, invalid, Error, Result};
use crate::nn::{sigmoid, Conv2d, ParamBuilder, ParamStore};
use crate::tensor::{self, Rng};

/// Seed of the default perceptual feature pyramid.
pub const PYRAMID_SEED: u64 = 0x5eed_f00d;
pub const DEFAULT_REC_WEIGHT: f64 = 1.0;
pub const DEFAULT_PER_WEIGHT: f64 = 0.1;

/// An RGB frame `(3, H, W)` with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Frame {
    pub pixels: Tensor,
}

impl Frame {
    pub fn new(pixels: Tensor) -> Result<Self> {
        let (c, h, w) = pixels.dims3()?;
        ensure!(c == 3, "frame must have 3 channels, got {c}");
        ensure!(h == w && h > 0, "frame must be square, got {h}x{w}");
        Ok(Self { pixels })
    }

    /// A frame filled with one value per channel.
    pub fn solid(size: usize, rgb: [f64; 3]) -> Result<Self> {
        let data: Vec<f64> = rgb.iter().flat_map(|&v| std::iter::repeat_n(v, size * size)).collect();
        Self::new(tensor::from_vec(data, (3, size, size))?)
    }

    pub fn size(&self) -> usize {
        self.pixels.dims()[1]
    }

    /// Rounds every value to the nearest multiple of 1/255 inside `[0, 1]`.
    pub fn quantized(&self) -> Result<Frame> {
        Frame::from_rgb8(self.size(), &self.to_rgb8()?)
    }

    /// Interleaved 8-bit RGB bytes, row-major.
    pub fn to_rgb8(&self) -> Result<Vec<u8>> {
        let hwc = self.pixels.permute((1, 2, 0))?.flatten_all()?;
        Ok(tensor::to_vec(&hwc)?
            .into_iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect())
    }

    pub fn from_rgb8(size: usize, bytes: &[u8]) -> Result<Frame> {
        ensure!(bytes.len() == 3 * size * size, "expected {} bytes, got {}", 3 * size * size, bytes.len());
        let data: Vec<f64> = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Frame::new(tensor::from_vec(data, (size, size, 3))?.permute((2, 0, 1))?.contiguous()?)
    }
}

/// Latent code `(d, h, w)`.
#[derive(Debug, Clone)]
pub struct LatentImage {
    pub values: Tensor,
}

impl LatentImage {
    pub fn new(values: Tensor) -> Result<Self> {
        values.dims3()?;
        Ok(Self { values })
    }

    pub fn channels(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn side(&self) -> usize {
        self.values.dims()[1]
    }
}

pub fn write_ppm(path: &Path, frame: &Frame) -> Result<()> {
    let n = frame.size();
    let mut f = fs::File::create(path)?;
    write!(f, "P6\n{n} {n}\n255\n")?;
    f.write_all(&frame.to_rgb8()?)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path)?;
    parse_ppm(&bytes)
}

/// Parses a binary P6 image with maxval 255.
pub fn parse_ppm(bytes: &[u8]) -> Result<Frame> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::Parse(format!("not a binary PPM (magic {:?})", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad PPM number {s:?}")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(Error::Parse(format!("only 8-bit PPM supported, maxval {max}")));
    }
    if w != h {
        return Err(Error::Parse(format!("frames must be square, got {w}x{h}")));
    }
    let body = bytes.get(pos..pos + 3 * w * h).ok_or_else(|| Error::Parse("truncated PPM pixel data".into()))?;
    Frame::from_rgb8(w, body)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub latent_channels: usize,
    /// Number of stride-2 stages; the downsample factor is `2^stages`.
    pub stages: usize,
    pub channels: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { latent_channels: 8, stages: 2, channels: 16 }
    }
}

impl CodecConfig {
    pub fn factor(&self) -> usize {
        1 << self.stages
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub stem: Conv2d,
    pub down: Vec<Conv2d>,
    pub head: Conv2d,
}

impl Encoder {
    fn new(b: &mut ParamBuilder, cfg: &CodecConfig) -> Result<Self> {
        let c = cfg.channels;
        let stem = Conv2d::new(&mut b.sub("stem"), 3, c, 3, 1, 1)?;
        let down = (0..cfg.stages)
            .map(|i| Conv2d::new(&mut b.sub(&format!("down{i}")), c, c, 4, 2, 1))
            .collect::<Result<_>>()?;
        let head = Conv2d::new(&mut b.sub("head"), c, cfg.latent_channels, 3, 1, 1)?;
        Ok(Self { stem, down, head })
    }

    /// `(B, 3, H, W) -> (B, d, H/f, W/f)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.stem.forward(x)?.silu()?;
        for conv in &self.down {
            h = conv.forward(&h)?.silu()?;
        }
        self.head.forward(&h)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    /// Takes the `2d`-channel stacked latent.
    pub stem: Conv2d,
    pub up: Vec<Conv2d>,
    pub head: Conv2d,
}

impl Decoder {
    fn new(b: &mut ParamBuilder, cfg: &CodecConfig) -> Result<Self> {
        let c = cfg.channels;
        let stem = Conv2d::new(&mut b.sub("stem"), 2 * cfg.latent_channels, c, 3, 1, 1)?;
        let up = (0..cfg.stages)
            .map(|i| Conv2d::new(&mut b.sub(&format!("up{i}")), c, c, 3, 1, 1))
            .collect::<Result<_>>()?;
        let head = Conv2d::new(&mut b.sub("head"), c, 3, 3, 1, 1)?;
        Ok(Self { stem, up, head })
    }

    pub fn input_channels(&self) -> usize {
        self.stem.in_channels()
    }

    /// `(B, 2d, h, w) -> (B, 3, h f, w f)` in `[0, 1]`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut h = self.stem.forward(z)?.silu()?;
        for conv in &self.up {
            let (_, _, s, _) = h.dims4()?;
            h = conv.forward(&h.upsample_nearest2d(2 * s, 2 * s)?)?.silu()?;
        }
        sigmoid(&self.head.forward(&h)?)
    }
}

#[derive(Debug, Clone)]
pub struct Codec {
    pub config: CodecConfig,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub params: ParamStore,
}

impl Codec {
    fn build(config: CodecConfig, mut params: ParamStore, rng: Option<&mut Rng>) -> Result<Self> {
        ensure!(config.latent_channels > 0 && config.channels > 0, "codec widths must be positive");
        let (encoder, decoder) = {
            let mut b = match rng {
                Some(r) => ParamBuilder::init(&mut params, r),
                None => ParamBuilder::load(&mut params),
            };
            (Encoder::new(&mut b.sub("encoder"), &config)?, Decoder::new(&mut b.sub("decoder"), &config)?)
        };
        Ok(Self { config, encoder, decoder, params })
    }

    pub fn init(config: CodecConfig, seed: u64) -> Result<Self> {
        Self::build(config, ParamStore::new(), Some(&mut tensor::rng(seed)))
    }

    pub fn from_params(config: CodecConfig, params: ParamStore) -> Result<Self> {
        Self::build(config, params, None)
    }

    pub fn encode_batch(&self, frames: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = frames.dims4()?;
        let f = self.config.factor();
        ensure!(c == 3, "frames must have 3 channels, got {c}");
        ensure!(h % f == 0 && w % f == 0, "frame side {h} not divisible by downsample factor {f}");
        self.encoder.forward(frames)
    }

    pub fn decode_batch(&self, reference: &Tensor, content: &Tensor) -> Result<Tensor> {
        let (_, d, _, _) = reference.dims4()?;
        ensure!(
            reference.dims() == content.dims(),
            "latent shapes differ: {:?} vs {:?}",
            reference.dims(),
            content.dims()
        );
        ensure!(d == self.config.latent_channels, "latent has {d} channels, codec expects {}", self.config.latent_channels);
        self.decoder.forward(&Tensor::cat(&[reference, content], 1)?)
    }

    pub fn encode(&self, frame: &Frame) -> Result<LatentImage> {
        LatentImage::new(self.encode_batch(&frame.pixels.unsqueeze(0)?)?.squeeze(0)?)
    }

    pub fn decode(&self, reference: &LatentImage, content: &LatentImage) -> Result<Frame> {
        if reference.values.dims() != content.values.dims() {
            return Err(invalid!("latent shapes differ: {:?} vs {:?}", reference.values.dims(), content.values.dims()));
        }
        let out = self.decode_batch(&reference.values.unsqueeze(0)?, &content.values.unsqueeze(0)?)?;
        Frame::new(out.squeeze(0)?)
    }

    /// `D([E(a), E(b)])` on batches.
    pub fn reconstruct_batch(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.decode_batch(&self.encode_batch(a)?, &self.encode_batch(b)?)
    }
}

/// Maps an image batch `(B, 3, H, W)` to a list of feature maps.
pub trait FeatureExtractor: Send + Sync {
    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>>;
}

/// Returns the pixels themselves.
#[derive(Debug, Clone, Copy, Default)]
pub struct PixelFeatures;

impl FeatureExtractor for PixelFeatures {
    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![images.clone()])
    }
}

/// Fixed random convolutions, one feature map per level, each level halving
/// resolution after the first. Weights are constants, not trainable.
#[derive(Debug, Clone)]
pub struct RandomConvPyramid {
    pub levels: Vec<(Tensor, Tensor, usize)>,
}

impl RandomConvPyramid {
    pub fn new(levels: usize, width: usize, seed: u64) -> Result<Self> {
        let mut rng = tensor::rng(seed);
        let mut out = Vec::with_capacity(levels);
        let mut cin = 3;
        for i in 0..levels {
            let std = 1.0 / ((cin * 9) as f64).sqrt();
            let w = (tensor::randn((width, cin, 3, 3), &mut rng)? * std)?;
            let b = (tensor::randn((1, width, 1, 1), &mut rng)? * 0.1)?;
            out.push((w, b, if i == 0 { 1 } else { 2 }));
            cin = width;
        }
        Ok(Self { levels: out })
    }
}

impl Default for RandomConvPyramid {
    fn default() -> Self {
        Self::new(3, 8, PYRAMID_SEED).expect("fixed pyramid construction cannot fail")
    }
}

impl FeatureExtractor for RandomConvPyramid {
    fn features(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = images.clone();
        let mut out = Vec::with_capacity(self.levels.len());
        for (w, b, stride) in &self.levels {
            h = h.conv2d(w, 1, *stride, 1, 1)?.broadcast_add(b)?.tanh()?;
            out.push(h.clone());
        }
        Ok(out)
    }
}

/// Mean absolute difference over every feature entry of every level.
pub fn feature_distance(extractor: &dyn FeatureExtractor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let fa = extractor.features(a)?;
    let fb = extractor.features(b)?;
    let mut total: Option<Tensor> = None;
    let mut count = 0usize;
    for (x, y) in fa.iter().zip(&fb) {
        count += x.elem_count();
        let s = (x - y)?.abs()?.sum_all()?;
        total = Some(match total {
            Some(t) => (t + s)?,
            None => s,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("extractor produced no features".into()))?;
    Ok((total / count as f64)?)
}

fn batch(frame: &Frame) -> Result<Tensor> {
    Ok(frame.pixels.unsqueeze(0)?)
}

/// Mean squared error between `f2` and its reconstruction from `[E(f1), E(f2)]`.
pub fn reconstruction_loss_batch(codec: &Codec, f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
    tensor::mse(&codec.reconstruct_batch(f1, f2)?, f2)
}

pub fn reconstruction_loss(codec: &Codec, f1: &Frame, f2: &Frame) -> Result<f64> {
    tensor::scalar(&reconstruction_loss_batch(codec, &batch(f1)?, &batch(f2)?)?)
}

pub fn perceptual_loss_batch(codec: &Codec, f1: &Tensor, f2: &Tensor, extractor: &dyn FeatureExtractor) -> Result<Tensor> {
    feature_distance(extractor, f2, &codec.reconstruct_batch(f1, f2)?)
}

pub fn perceptual_loss(codec: &Codec, f1: &Frame, f2: &Frame, extractor: &dyn FeatureExtractor) -> Result<f64> {
    tensor::scalar(&perceptual_loss_batch(codec, &batch(f1)?, &batch(f2)?, extractor)?)
}

/// `rec_weight * L_rec + per_weight * L_per`, sharing one reconstruction.
pub fn codec_loss_batch(
    codec: &Codec,
    f1: &Tensor,
    f2: &Tensor,
    extractor: &dyn FeatureExtractor,
    rec_weight: f64,
    per_weight: f64,
) -> Result<Tensor> {
    ensure!(rec_weight >= 0.0 && per_weight >= 0.0, "loss weights must be nonnegative");
    let recon = codec.reconstruct_batch(f1, f2)?;
    let rec = (tensor::mse(&recon, f2)? * rec_weight)?;
    if per_weight == 0.0 {
        return Ok(rec);
    }
    Ok((rec + (feature_distance(extractor, f2, &recon)? * per_weight)?)?)
}

pub fn codec_loss(
    codec: &Codec,
    f1: &Frame,
    f2: &Frame,
    extractor: &dyn FeatureExtractor,
    rec_weight: f64,
    per_weight: f64,
) -> Result<f64> {
    tensor::scalar(&codec_loss_batch(codec, &batch(f1)?, &batch(f2)?, extractor, rec_weight, per_weight)?)
}

/// Per-pixel mean over a `(B, C, H, W)` batch, one value per image.
pub fn per_image_mean(x: &Tensor) -> Result<Tensor> {
    Ok(x.flatten_from(1)?.mean(D::Minus1)?)
}
