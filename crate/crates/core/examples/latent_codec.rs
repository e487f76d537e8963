//! Train the appearance/content autoencoder on frames from one clip and
//! rebuild each frame from its own latent and from the first frame's.

use facediff::harness::corpus::{corpus_basis, make_corpus};
use facediff::harness::{train, TrainConfig};
use facediff::metrics;

fn main() -> facediff::Result<()> {
    let cfg = TrainConfig { learning_rate: 3e-3, epochs: 80, ..TrainConfig::default() };
    let basis = corpus_basis(&cfg.dims)?;
    let mut corpus = make_corpus(1, 25, 3, &basis, &cfg.dims)?;
    corpus.clips[0].frames.truncate(8);
    let (codec, report) = train::train_codec(&corpus, &cfg)?;
    println!("codec loss {:.4} -> {:.4}", report.initial_loss, report.final_loss);

    let frames = &corpus.clips[0].frames;
    let first = codec.encode(&frames[0])?;
    println!("latent grid {} x {} x {}", first.channels(), first.side(), first.side());
    println!("self-reconstruction PSNR {:.2} dB", train::self_reconstruction_psnr(&codec, frames)?);
    for (i, f) in frames.iter().enumerate().skip(1).step_by(3) {
        let rebuilt = codec.decode(&first, &codec.encode(f)?)?;
        println!("frame {i} from the first frame's appearance: {:.2} dB", metrics::psnr(&rebuilt, f)?);
    }
    Ok(())
}
