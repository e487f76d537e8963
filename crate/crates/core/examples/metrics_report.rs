//! Score frames and motion with the evaluation metrics on hand-built inputs
//! whose answers are known.

use facediff::latentcodec::Frame;
use facediff::metrics::{self, GaussianStats};
use facediff::motiongen::{CoeffKind, CoeffSequence};
use facediff::tensor::from_vec;
use nalgebra::{DMatrix, DVector};

fn main() -> facediff::Result<()> {
    let grey = Frame::solid(16, [0.3; 3])?;
    let lighter = Frame::solid(16, [0.4; 3])?;
    println!("PSNR {:.3} dB, SSIM {:.4}", metrics::psnr(&grey, &lighter)?, metrics::ssim(&grey, &lighter)?);

    let p = GaussianStats::new(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])))?;
    let q = GaussianStats::new(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_vec(vec![9.0, 1.0])))?;
    println!("Frechet distance between the diagonal Gaussians {:.6}", metrics::frechet_distance(&p, &q)?);

    let rows: Vec<f64> = (0..50)
        .flat_map(|i| {
            let yaw = 0.2 * (i as f64 * std::f64::consts::TAU / 12.0).sin();
            [0.0, yaw, 0.0, 0.0, 0.0, 0.0]
        })
        .collect();
    let pose = CoeffSequence::new(from_vec(rows, (50, 6))?, CoeffKind::Pose)?;
    let beats = metrics::detect_motion_beats(&pose)?;
    println!("motion beats {beats:?}");
    let audio_beats = [3, 9, 15, 21, 27, 33, 39, 45];
    println!("beat alignment {:.4}", metrics::beat_align(&audio_beats, &beats, metrics::BEAT_SIGMA)?);
    println!("pose diversity {:.4}", metrics::motion_diversity(&[pose])?);
    Ok(())
}
