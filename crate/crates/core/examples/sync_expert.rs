//! Train the lip-sync scorer on a small synthetic corpus and compare its
//! score for aligned and time-shifted mouth/audio pairs on unseen clips.

use facediff::harness::corpus::{corpus_basis, make_corpus};
use facediff::harness::{train, TrainConfig};

fn main() -> facediff::Result<()> {
    let cfg = TrainConfig { learning_rate: 2e-3, epochs: 150, ..TrainConfig::default() };
    let basis = corpus_basis(&cfg.dims)?;
    let corpus = make_corpus(6, 25, 3, &basis, &cfg.dims)?;
    let unseen = make_corpus(4, 25, 1003, &basis, &cfg.dims)?;

    let (expert, report) = train::train_expert(&corpus, &cfg, &basis)?;
    println!("contrastive loss {:.3} -> {:.3} over {} steps", report.initial_loss, report.final_loss, report.history.len());

    let clips = train::sync_clips(&unseen, &basis)?;
    for offset in [0, 2, 5, -5] {
        println!("offset {offset:>2}: mean sync probability {:.3}", train::mean_sync(&expert, &clips, offset)?);
    }
    Ok(())
}
