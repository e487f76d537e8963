//! Train every stage briefly on a synthetic corpus, save the models, and
//! drive the full audio-to-video pipeline from files on disk.

use facediff::audiofeat;
use facediff::harness::corpus::{corpus_basis, make_corpus};
use facediff::harness::pipeline::{self, EvalInputs, Models};
use facediff::harness::{train, TrainConfig};
use facediff::latentcodec;

fn main() -> facediff::Result<()> {
    let cfg = TrainConfig { learning_rate: 1e-3, epochs: 3, inference_steps: 10, ..TrainConfig::default() };
    let basis = corpus_basis(&cfg.dims)?;
    let corpus = make_corpus(3, 25, 21, &basis, &cfg.dims)?;

    let (expert, _) = train::train_expert(&corpus, &TrainConfig { epochs: 40, ..cfg.clone() }, &basis)?;
    let sync = train::SyncTerm { expert: &expert, basis: &basis, corpus: &corpus };
    let (motion, r1) = train::train_stage1(&corpus, &cfg, Some(&sync))?;
    let (codec, r2) = train::train_codec(&corpus, &cfg)?;
    let (unet, r3) = train::train_stage2(&corpus, &cfg, &codec, None)?;
    println!("final losses: motion {:.4}, codec {:.4}, frames {:.4}", r1.final_loss, r2.final_loss, r3.final_loss);

    let root = std::env::temp_dir().join("facediff_pipeline_example");
    let models = root.join("models");
    Models { motion: (motion, cfg.clone()), codec: (codec, cfg.clone()), unet: (unet, cfg.clone()), expert: Some((expert, cfg.clone())) }.save(&models)?;

    let clip = &make_corpus(1, 25, 99, &basis, &cfg.dims)?.clips[0];
    let (wav, reference) = (root.join("speech.wav"), root.join("reference.ppm"));
    audiofeat::write_wav(&wav, &clip.waveform)?;
    latentcodec::write_ppm(&reference, &clip.frames[0])?;
    let out = root.join("video");
    let video = pipeline::run_pipeline(&wav, &reference, &models, &out, 7)?;
    println!("wrote {} frames to {}", video.frames.len(), out.display());
    print!("{}", video.report.to_text());

    let report = pipeline::evaluate_video(&EvalInputs { video: out, audio: Some(wav), models: Some(models), ..Default::default() })?;
    print!("{}", report.to_csv());
    Ok(())
}
