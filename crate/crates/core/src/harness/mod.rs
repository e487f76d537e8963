//! Corpus generation, configuration, training, persistence, and the
//! end-to-end pipeline behind the command-line tool.

pub mod checkpoint;
pub mod cli;
pub mod coeffio;
pub mod config;
pub mod corpus;
pub mod pipeline;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ModelDims, Stage, TrainConfig};
pub use corpus::{make_corpus, Clip, SyntheticCorpus};
pub use train::{train_codec, train_expert, train_stage1, train_stage2, TrainReport};
pub use pipeline::{run_pipeline, Models, Report};
