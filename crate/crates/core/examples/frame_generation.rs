//! Train the frame denoiser on latents of one clip and render frames from
//! ground-truth motion, inspecting the attention it pays to its conditions.

use facediff::harness::corpus::{corpus_basis, make_corpus};
use facediff::harness::{train, TrainConfig};
use facediff::{framegen, metrics};

fn main() -> facediff::Result<()> {
    let cfg = TrainConfig { learning_rate: 2e-3, epochs: 10, inference_steps: 10, ..TrainConfig::default() };
    let basis = corpus_basis(&cfg.dims)?;
    let corpus = make_corpus(1, 25, 3, &basis, &cfg.dims)?;
    let (codec, _) = train::train_codec(&corpus, &TrainConfig { epochs: 20, ..cfg.clone() })?;
    let (net, report) = train::train_stage2(&corpus, &cfg, &codec, None)?;
    println!("frame denoiser loss {:.4} -> {:.4}", report.initial_loss, report.final_loss);
    for (i, block) in net.denoiser.attention_blocks().iter().enumerate() {
        println!("attention block {i}: {} conditioning context(s)", block.context_count());
    }

    let clip = &corpus.clips[0];
    let schedule = train::schedule_for(&cfg)?;
    let frames = framegen::generate_frames_parallel(&clip.betas, &clip.poses, &clip.frames[0], &net.denoiser, &codec, &schedule, cfg.inference_steps, 9)?;
    let psnr: f64 = frames.iter().zip(&clip.frames).map(|(a, b)| metrics::psnr(a, b)).sum::<facediff::Result<f64>>()? / frames.len() as f64;
    println!("{} frames rendered, mean PSNR against the clip {psnr:.2} dB", frames.len());
    Ok(())
}
