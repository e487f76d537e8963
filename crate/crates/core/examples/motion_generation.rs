//! Fit the decoupled expression and pose denoisers to a few clips, then
//! sample coefficient sequences for new audio with different seeds.

use facediff::harness::corpus::{corpus_basis, make_corpus};
use facediff::harness::{train, TrainConfig};
use facediff::{metrics, motiongen};

fn main() -> facediff::Result<()> {
    let cfg = TrainConfig { learning_rate: 1e-3, epochs: 60, no_sync_loss: true, ..TrainConfig::default() };
    let basis = corpus_basis(&cfg.dims)?;
    let corpus = make_corpus(4, 25, 11, &basis, &cfg.dims)?;
    let (model, report) = train::train_stage1(&corpus, &cfg, None)?;
    println!("stage-one loss {:.4} -> {:.4}", report.initial_loss, report.final_loss);

    let mask = motiongen::alignment_mask(6, 1)?;
    for row in mask.to_matrix() {
        println!("  {}", row.iter().map(|&a| if a { '#' } else { '.' }).collect::<String>());
    }

    let schedule = train::schedule_for(&cfg)?;
    let audio = &make_corpus(1, 25, 500, &basis, &cfg.dims)?.clips[0].audio;
    let mut poses = Vec::new();
    for seed in 0..3 {
        let (betas, pose) = motiongen::generate_motion(audio, &model, &schedule, 20, seed)?;
        println!("seed {seed}: {} expression rows, first yaw values {:.3?}", betas.frames(), pose.values.to_vec2::<f64>()?[..3].iter().map(|r| r[1]).collect::<Vec<_>>());
        poses.push(pose);
    }
    println!("pose spread across seeds {:.4}", metrics::cross_sample_diversity(&poses)?);
    Ok(())
}
