//! Run every ablation arm at toy size and print the comparison table.

use facediff::harness::config::ModelDims;
use facediff::harness::corpus::{corpus_basis, make_corpus};
use facediff::harness::pipeline::{ablation_csv, run_ablation, AblationArm, AblationPlan};
use facediff::harness::TrainConfig;

fn main() -> facediff::Result<()> {
    let dims = ModelDims { frame_size: 16, motion_layers: 1, unet_channels: 16, unet_context: 16, unet_groups: 4, ..ModelDims::default() };
    let cfg = TrainConfig { dims, learning_rate: 1e-3, epochs: 2, inference_steps: 5, ..TrainConfig::default() };
    let basis = corpus_basis(&cfg.dims)?;
    let corpus = make_corpus(3, 12, 4, &basis, &cfg.dims)?;
    let held_out = make_corpus(2, 12, 1004, &basis, &cfg.dims)?;
    let rows = run_ablation(&corpus, &held_out, &AblationPlan::uniform(&cfg), &AblationArm::ALL)?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}
