//! Command-line interface.
//!
//! Training settings resolve in order: defaults, `--config <file>`, the
//! explicit flags, then any `--set key=value` overrides (which reach every
//! configuration key, including model dimensions).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::{Stage, TrainConfig};
use super::corpus::{corpus_basis, load_corpus, make_corpus, save_corpus};
use super::pipeline::{self, AblationArm, AblationPlan, EvalInputs};
use super::train::{self, SyncTerm, TrainReport};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "facediff", version, about = "Two-stage diffusion talking-head generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus of audio, coefficients and frames.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        clips: usize,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the lip-sync scorer.
    TrainExpert(StageArgs),
    /// Train the expression and pose denoisers.
    TrainMotion(StageArgs),
    /// Train the latent encoder and decoder.
    TrainCodec(StageArgs),
    /// Train the latent frame denoiser.
    TrainUnet(StageArgs),
    /// Generate a video from a WAV file and a reference frame.
    Generate {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a generated video; writes report.txt and metrics.csv.
    Evaluate {
        #[arg(long)]
        video: PathBuf,
        /// Ground-truth frame directory.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        audio: Option<PathBuf>,
        /// Model root with a trained scorer, for the sync score.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Report directory; defaults to the video directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score every ablation arm.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        held_out: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated arm names; all arms when omitted.
        #[arg(long, value_delimiter = ',')]
        arms: Vec<String>,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Debug, Args)]
pub struct StageArgs {
    /// Corpus directory written by `synth-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// Model root; the stage is written to its own subdirectory.
    #[arg(long)]
    pub models: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// Line-based `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda_exp: Option<f64>,
    #[arg(long)]
    pub lambda_pose: Option<f64>,
    #[arg(long)]
    pub lambda_sync: Option<f64>,
    #[arg(long)]
    pub lambda_rec: Option<f64>,
    #[arg(long)]
    pub lambda_per: Option<f64>,
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub inference_steps: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub single_transformer: bool,
    #[arg(long)]
    pub concat_unet_conditions: bool,
    #[arg(long)]
    pub no_alignment_mask: bool,
    #[arg(long)]
    pub no_sync_loss: bool,
    /// Condition frame training on sampled rather than ground-truth coefficients.
    #[arg(long)]
    pub no_teacher_forcing: bool,
    /// Any configuration key, e.g. `--set motion_layers=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl TrainArgs {
    pub fn resolve(&self, stage: Stage) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        cfg.stage = stage;
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        apply!(lambda_exp, lambda_pose, lambda_sync, lambda_rec, lambda_per, timesteps, inference_steps, frames, batch_size, learning_rate, epochs, seed);
        cfg.single_transformer |= self.single_transformer;
        cfg.concat_unet_conditions |= self.concat_unet_conditions;
        cfg.no_alignment_mask |= self.no_alignment_mask;
        cfg.no_sync_loss |= self.no_sync_loss;
        if self.no_teacher_forcing {
            cfg.teacher_forcing = false;
        }
        for item in &self.overrides {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not KEY=VALUE")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_report(what: &str, report: &TrainReport) {
    println!("{what}: steps = {}", report.history.len());
    println!("{what}: initial_loss = {}", report.initial_loss);
    println!("{what}: final_loss = {}", report.final_loss);
}

fn train_stage(stage: Stage, args: &StageArgs) -> Result<()> {
    let cfg = args.train.resolve(stage)?;
    let corpus = load_corpus(&args.data, &cfg.dims)?;
    let basis = corpus_basis(&cfg.dims)?;
    let root = &args.models;
    match stage {
        Stage::Expert => {
            let (expert, report) = train::train_expert(&corpus, &cfg, &basis)?;
            print_report("expert", &report);
            let clips = train::sync_clips(&corpus, &basis)?;
            println!("expert: aligned_sync = {}", train::mean_sync(&expert, &clips, 0)?);
            pipeline::save_expert(root, &expert, &cfg)?;
        }
        Stage::Motion => {
            let expert = if cfg.effective_lambda_sync() > 0.0 { Some(pipeline::load_expert(root)?.0) } else { None };
            let sync = expert.as_ref().map(|expert| SyncTerm { expert, basis: &basis, corpus: &corpus });
            let (model, report) = train::train_stage1(&corpus, &cfg, sync.as_ref())?;
            print_report("motion", &report);
            pipeline::save_motion(root, &model, &cfg)?;
        }
        Stage::Codec => {
            let (codec, report) = train::train_codec(&corpus, &cfg)?;
            print_report("codec", &report);
            let frames: Vec<_> = corpus.clips.iter().flat_map(|c| c.frames.iter().cloned()).collect();
            println!("codec: self_reconstruction_psnr = {}", train::self_reconstruction_psnr(&codec, &frames)?);
            pipeline::save_codec(root, &codec, &cfg)?;
        }
        Stage::Unet => {
            let (codec, _) = pipeline::load_codec(root)?;
            let motion = if cfg.teacher_forcing { None } else { Some(pipeline::load_motion(root)?.0) };
            let (net, report) = train::train_stage2(&corpus, &cfg, &codec, motion.as_ref())?;
            print_report("unet", &report);
            pipeline::save_unet(root, &net, &cfg)?;
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { out, clips, train } => {
            let cfg = train.resolve(Stage::Motion)?;
            let basis = corpus_basis(&cfg.dims)?;
            let corpus = make_corpus(clips, cfg.frames, cfg.seed, &basis, &cfg.dims)?;
            save_corpus(&corpus, &out)?;
            write_text(&out.join("config.txt"), &cfg.to_text())?;
            println!("wrote {clips} clips of {} frames to {}", cfg.frames, out.display());
        }
        Command::TrainExpert(a) => train_stage(Stage::Expert, &a)?,
        Command::TrainMotion(a) => train_stage(Stage::Motion, &a)?,
        Command::TrainCodec(a) => train_stage(Stage::Codec, &a)?,
        Command::TrainUnet(a) => train_stage(Stage::Unet, &a)?,
        Command::Generate { audio, reference, models, out, seed } => {
            let video = pipeline::run_pipeline(&audio, &reference, &models, &out, seed)?;
            print!("{}", video.report.to_text());
        }
        Command::Evaluate { video, truth, audio, models, out } => {
            let report = pipeline::evaluate_video(&EvalInputs { video: video.clone(), truth, audio, models })?;
            let dir = out.unwrap_or(video);
            std::fs::create_dir_all(&dir)?;
            report.write(&dir)?;
            print!("{}", report.to_text());
        }
        Command::Ablate { data, held_out, out, arms, train } => {
            let cfg = train.resolve(Stage::Motion)?;
            let arms = if arms.is_empty() {
                AblationArm::ALL.to_vec()
            } else {
                arms.iter()
                    .map(|a| AblationArm::parse(a).ok_or_else(|| Error::Config(format!("unknown ablation arm {a:?}"))))
                    .collect::<Result<Vec<_>>>()?
            };
            let corpus = load_corpus(&data, &cfg.dims)?;
            let held = load_corpus(&held_out, &cfg.dims)?;
            let rows = pipeline::run_ablation(&corpus, &held, &AblationPlan::uniform(&cfg), &arms)?;
            let csv = pipeline::ablation_csv(&rows);
            write_text(&out.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

/// Parses the process arguments, runs the command and maps errors to exit code 1.
pub fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn settings_layer_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "# base\nepochs = 7\nlambda_sync = 0.5\nmotion_layers = 3\n").unwrap();
        let cli = Cli::parse_from([
            "facediff", "train-motion", "--data", "d", "--models", "m", "--config", path.to_str().unwrap(),
            "--epochs", "9", "--no-sync-loss", "--set", "motion_layers=4",
        ]);
        let Command::TrainMotion(a) = cli.command else { panic!("wrong subcommand") };
        let cfg = a.train.resolve(Stage::Motion).unwrap();
        assert_eq!(cfg.epochs, 9);
        assert_eq!(cfg.lambda_sync, 0.5);
        assert!(cfg.no_sync_loss);
        assert_eq!(cfg.dims.motion_layers, 4);
        assert_eq!(cfg.stage, Stage::Motion);
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let args = TrainArgs { overrides: vec!["nonsense".into()], ..Default::default() };
        assert!(args.resolve(Stage::Codec).is_err());
        let args = TrainArgs { overrides: vec!["no_such_key=1".into()], ..Default::default() };
        assert!(args.resolve(Stage::Codec).is_err());
    }
}
