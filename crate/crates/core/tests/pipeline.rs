//! Library-level integration: persistence round trips, generation from
//! reloaded models, and the ablation runner.

use facediff::harness::config::ModelDims;
use facediff::harness::corpus::{corpus_basis, load_corpus, make_corpus, save_corpus};
use facediff::harness::pipeline::{self, run_ablation, AblationArm, AblationPlan, Models};
use facediff::harness::{train, TrainConfig};
use facediff::metrics;
use facediff::tensor::to_vec;

fn small() -> TrainConfig {
    let dims = ModelDims {
        frame_size: 16,
        motion_layers: 1,
        motion_width: 16,
        codec_channels: 4,
        unet_channels: 8,
        unet_context: 8,
        unet_groups: 2,
        expert_hidden: 8,
        ..ModelDims::default()
    };
    TrainConfig { dims, frames: 12, batch_size: 2, epochs: 1, timesteps: 50, inference_steps: 3, learning_rate: 1e-3, ..TrainConfig::default() }
}

fn trained(cfg: &TrainConfig, corpus: &facediff::harness::SyntheticCorpus) -> Models {
    let basis = corpus_basis(&cfg.dims).unwrap();
    let (expert, _) = train::train_expert(corpus, cfg, &basis).unwrap();
    let sync = train::SyncTerm { expert: &expert, basis: &basis, corpus };
    let (motion, _) = train::train_stage1(corpus, cfg, Some(&sync)).unwrap();
    let (codec, _) = train::train_codec(corpus, cfg).unwrap();
    let (unet, _) = train::train_stage2(corpus, cfg, &codec, None).unwrap();
    Models { motion: (motion, cfg.clone()), codec: (codec, cfg.clone()), unet: (unet, cfg.clone()), expert: Some((expert, cfg.clone())) }
}

#[test]
fn corpus_survives_disk_round_trip() {
    let cfg = small();
    let basis = corpus_basis(&cfg.dims).unwrap();
    let corpus = make_corpus(2, cfg.frames, 5, &basis, &cfg.dims).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_corpus(&corpus, dir.path()).unwrap();
    let back = load_corpus(dir.path(), &cfg.dims).unwrap();
    assert_eq!(back.clips.len(), 2);
    for (a, b) in corpus.clips.iter().zip(&back.clips) {
        assert_eq!(a.audio_beats, b.audio_beats);
        assert_eq!(a.frames.len(), b.frames.len());
        let audio_err = to_vec(&(&a.audio.features - &b.audio.features).unwrap()).unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(audio_err < 1e-9, "audio features drifted by {audio_err}");
        assert!(metrics::psnr(&a.frames[3], &b.frames[3]).unwrap() > 45.0);
    }
}

#[test]
fn reloaded_models_generate_the_same_video() {
    let cfg = small();
    let basis = corpus_basis(&cfg.dims).unwrap();
    let corpus = make_corpus(2, cfg.frames, 6, &basis, &cfg.dims).unwrap();
    let models = trained(&cfg, &corpus);
    let dir = tempfile::tempdir().unwrap();
    models.save(dir.path()).unwrap();
    let reloaded = Models::load(dir.path()).unwrap();

    let clip = &corpus.clips[1];
    let a = pipeline::generate_video(&models, &clip.audio, &clip.audio_beats, &clip.frames[0], 4).unwrap();
    let b = pipeline::generate_video(&reloaded, &clip.audio, &clip.audio_beats, &clip.frames[0], 4).unwrap();
    assert_eq!(a.frames.len(), clip.frames.len());
    for (x, y) in a.frames.iter().zip(&b.frames) {
        assert_eq!(x.to_rgb8().unwrap(), y.to_rgb8().unwrap());
    }
    assert_eq!(a.report.to_text(), b.report.to_text());
    for key in ["frames", "beat_align", "pose_diversity", "sync_score", "reference_psnr"] {
        assert!(a.report.get(key).is_some_and(f64::is_finite), "missing {key}");
    }

    let out = dir.path().join("video");
    pipeline::write_video(&out, &a).unwrap();
    assert_eq!(pipeline::read_video_frames(&out).unwrap().len(), a.frames.len());
}

#[test]
fn ground_truth_poses_follow_audio_beats() {
    let cfg = TrainConfig::default();
    let basis = corpus_basis(&cfg.dims).unwrap();
    let corpus = make_corpus(6, 50, 12, &basis, &cfg.dims).unwrap();
    let (mut aligned, mut shuffled) = (0.0, 0.0);
    for (i, clip) in corpus.clips.iter().enumerate() {
        let beats = metrics::detect_motion_beats(&clip.poses).unwrap();
        aligned += metrics::beat_align(&clip.audio_beats, &beats, metrics::BEAT_SIGMA).unwrap();
        let other = &corpus.clips[(i + 1) % corpus.clips.len()];
        shuffled += metrics::beat_align(&other.audio_beats, &beats, metrics::BEAT_SIGMA).unwrap();
    }
    assert!(aligned > shuffled, "aligned {aligned} vs mismatched {shuffled}");
}

#[test]
fn every_ablation_arm_reports() {
    let cfg = small();
    let basis = corpus_basis(&cfg.dims).unwrap();
    let corpus = make_corpus(2, cfg.frames, 7, &basis, &cfg.dims).unwrap();
    let held = make_corpus(1, cfg.frames, 70, &basis, &cfg.dims).unwrap();
    let rows = run_ablation(&corpus, &held, &AblationPlan::uniform(&cfg), &AblationArm::ALL).unwrap();
    assert_eq!(rows.len(), 5);
    for row in &rows {
        for key in ["motion_loss", "frame_loss", "sync_score", "beat_align", "psnr", "ssim"] {
            assert!(row.report.get(key).is_some_and(f64::is_finite), "{} lacks {key}", row.arm.name());
        }
    }
    let csv = pipeline::ablation_csv(&rows);
    assert_eq!(csv.lines().count(), 6);
    // Arms that leave stage one alone reuse the full model's motion.
    let full = rows[0].report.get("motion_loss").unwrap();
    assert_eq!(rows[2].report.get("motion_loss").unwrap(), full);
}
