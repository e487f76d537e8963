//! Image quality, feature-distribution distance, motion diversity and
//! beat alignment.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure, Result};
use crate::latentcodec::{FeatureExtractor, Frame};
use crate::motiongen::CoeffSequence;
use crate::tensor;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const BEAT_SIGMA: f64 = 3.0;
/// Label used wherever the Fréchet distance is reported.
pub const FD_LABEL: &str = "FD (substitute features)";

fn pixels(a: &Frame, b: &Frame) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(a.pixels.dims() == b.pixels.dims(), "frame shapes differ: {:?} vs {:?}", a.pixels.dims(), b.pixels.dims());
    Ok((tensor::to_vec(&a.pixels)?, tensor::to_vec(&b.pixels)?))
}

/// Peak signal-to-noise ratio for `[0, 1]` images, capped at [`PSNR_CAP`].
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let (x, y) = pixels(a, b)?;
    Ok(psnr_from_mse(x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// Normalized 2-D Gaussian window, row-major `size * size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect()
}

/// Mean structural similarity over every fully-contained 11x11 window,
/// averaged over channels.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    let (x, y) = pixels(a, b)?;
    let n = a.size();
    let k = SSIM_WINDOW;
    ensure!(n >= k, "ssim needs sides of at least {k}, got {n}");
    let w = gaussian_window(k, SSIM_SIGMA);
    let plane = n * n;
    let span = n - k + 1;
    let mut total = 0.0;
    for c in 0..3 {
        let (xc, yc) = (&x[c * plane..(c + 1) * plane], &y[c * plane..(c + 1) * plane]);
        let mut sum = 0.0;
        for i in 0..span {
            for j in 0..span {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for u in 0..k {
                    for v in 0..k {
                        let g = w[u * k + v];
                        let p = (i + u) * n + j + v;
                        let (px, py) = (xc[p], yc[p]);
                        mx += g * px;
                        my += g * py;
                        xx += g * px * px;
                        yy += g * py * py;
                        xy += g * px * py;
                    }
                }
                let vx = xx - mx * mx;
                let vy = yy - my * my;
                let cov = xy - mx * my;
                sum += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            }
        }
        total += sum / (span * span) as f64;
    }
    Ok(total / 3.0)
}

/// Mean and covariance of a feature distribution.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        ensure!(cov.nrows() == d && cov.ncols() == d, "covariance must be {d}x{d}");
        for i in 0..d {
            for j in 0..i {
                ensure!((cov[(i, j)] - cov[(j, i)]).abs() <= 1e-10, "covariance is not symmetric at ({i}, {j})");
            }
        }
        let min_eig = cov.clone().symmetric_eigen().eigenvalues.min();
        ensure!(d == 0 || min_eig >= -1e-8, "covariance has eigenvalue {min_eig} < 0");
        Ok(Self { mean, cov })
    }

    /// Sample mean and unbiased covariance of `rows` (at least two).
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Self> {
        ensure!(rows.len() >= 2, "need at least two samples");
        let d = rows[0].len();
        ensure!(rows.iter().all(|r| r.len() == d), "samples have different widths");
        let n = rows.len() as f64;
        let mut mean = DVector::zeros(d);
        for r in rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        for r in rows {
            let c = DVector::from_column_slice(r) - &mean;
            cov += &c * c.transpose();
        }
        cov /= n - 1.0;
        let cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))`.
///
/// The trace of `(S1 S2)^(1/2)` is taken as that of the symmetric
/// `(S1^(1/2) S2 S1^(1/2))^(1/2)`, which has the same eigenvalues.
pub fn frechet_distance(p: &GaussianStats, q: &GaussianStats) -> Result<f64> {
    ensure!(p.dim() == q.dim(), "dimension mismatch: {} vs {}", p.dim(), q.dim());
    let dm = (&p.mean - &q.mean).norm_squared();
    let r1 = sqrt_psd(&p.cov);
    let cross = sqrt_psd(&(&r1 * &q.cov * &r1));
    let fd = dm + p.cov.trace() + q.cov.trace() - 2.0 * cross.trace();
    Ok(fd.max(0.0))
}

/// Spatially pooled features: per level and channel, the mean over positions.
pub fn frame_features(frames: &[Frame], extractor: &dyn FeatureExtractor) -> Result<Vec<Vec<f64>>> {
    frames
        .iter()
        .map(|f| {
            let maps = extractor.features(&f.pixels.unsqueeze(0)?)?;
            let mut row = Vec::new();
            for m in maps {
                row.extend(tensor::to_vec(&m.flatten_from(2)?.mean(2)?)?);
            }
            Ok(row)
        })
        .collect()
}

/// Fréchet distance between pooled-feature statistics of two frame sets.
pub fn frame_set_distance(a: &[Frame], b: &[Frame], extractor: &dyn FeatureExtractor) -> Result<f64> {
    let pa = GaussianStats::from_samples(&frame_features(a, extractor)?)?;
    let pb = GaussianStats::from_samples(&frame_features(b, extractor)?)?;
    frechet_distance(&pa, &pb)
}

/// Computed on values shifted by the first one, so constant input gives exactly 0.
fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let v0 = values[0];
    let mean = values.iter().map(|v| v - v0).sum::<f64>() / n;
    (values.iter().map(|v| (v - v0 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Per-dimension population standard deviation over all frames of all
/// sequences, averaged over dimensions.
pub fn motion_diversity(sequences: &[CoeffSequence]) -> Result<f64> {
    ensure!(!sequences.is_empty(), "need at least one sequence");
    let d = sequences[0].dim();
    ensure!(sequences.iter().all(|s| s.dim() == d), "sequences have different widths");
    let rows: Vec<Vec<f64>> = sequences.iter().map(|s| s.rows()).collect::<Result<Vec<_>>>()?.concat();
    let total: f64 = (0..d)
        .map(|j| population_std(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .sum();
    Ok(total / d as f64)
}

/// Standard deviation across sequences at each `(frame, dim)`, averaged.
/// Zero exactly when every sequence is identical.
pub fn cross_sample_diversity(sequences: &[CoeffSequence]) -> Result<f64> {
    ensure!(!sequences.is_empty(), "need at least one sequence");
    let (f, d) = (sequences[0].frames(), sequences[0].dim());
    ensure!(
        sequences.iter().all(|s| s.frames() == f && s.dim() == d),
        "sequences have different shapes"
    );
    let all: Vec<Vec<Vec<f64>>> = sequences.iter().map(|s| s.rows()).collect::<Result<_>>()?;
    let mut total = 0.0;
    for i in 0..f {
        for j in 0..d {
            total += population_std(&all.iter().map(|s| s[i][j]).collect::<Vec<_>>());
        }
    }
    Ok(total / (f * d) as f64)
}

/// Rotation speed per frame: central difference inside, one-sided at the ends.
pub fn rotation_speed(pose: &CoeffSequence) -> Result<Vec<f64>> {
    let f = pose.frames();
    ensure!(pose.dim() >= 3, "pose needs at least three rotation components");
    ensure!(f >= 3, "need at least three frames, got {f}");
    let rows = pose.rows()?;
    let dist = |a: usize, b: usize| -> f64 { (0..3).map(|j| (rows[a][j] - rows[b][j]).powi(2)).sum::<f64>().sqrt() };
    Ok((0..f)
        .map(|i| match i {
            0 => dist(1, 0),
            _ if i == f - 1 => dist(f - 1, f - 2),
            _ => dist(i + 1, i - 1) / 2.0,
        })
        .collect())
}

/// Frames where the rotation speed is a strict local minimum. Differences
/// below `1e-9` of the peak speed count as ties.
pub fn detect_motion_beats(pose: &CoeffSequence) -> Result<Vec<usize>> {
    let v = rotation_speed(pose)?;
    let tol = 1e-9 * v.iter().cloned().fold(0.0, f64::max);
    Ok((1..v.len() - 1).filter(|&i| v[i] + tol < v[i - 1] && v[i] + tol < v[i + 1]).collect())
}

/// Mean over motion beats of `exp(-d^2 / (2 sigma^2))`, `d` the distance to
/// the nearest audio beat. No motion beats scores 0.
pub fn beat_align(audio_beats: &[usize], motion_beats: &[usize], sigma: f64) -> Result<f64> {
    ensure!(sigma > 0.0, "sigma must be positive");
    if motion_beats.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = motion_beats
        .iter()
        .map(|&m| {
            audio_beats
                .iter()
                .map(|&a| {
                    let d = m as f64 - a as f64;
                    (-d * d / (2.0 * sigma * sigma)).exp()
                })
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / motion_beats.len() as f64)
}
