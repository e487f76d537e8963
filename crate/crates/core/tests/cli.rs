//! Drives the `facediff` binary through every subcommand on a tiny setup.

use std::path::Path;
use std::process::Command;

const SMALL: &[&str] = &[
    "--frames", "10", "--batch-size", "2", "--epochs", "1", "--timesteps", "50", "--inference-steps", "3",
    "--set", "frame_size=16", "--set", "motion_layers=1", "--set", "unet_channels=8", "--set", "unet_context=8",
    "--set", "unet_groups=2", "--set", "codec_channels=4", "--set", "expert_hidden=8",
];

fn facediff(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_facediff")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "facediff {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL).copied().collect()
}

#[test]
fn full_command_line_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let (data, held, models, video, eval) =
        (dir.path().join("data"), dir.path().join("held"), dir.path().join("models"), dir.path().join("video"), dir.path().join("eval"));

    let made = facediff(&with_small(&["synth-data", "--out", s(&data), "--clips", "2"]));
    assert!(made.contains("wrote 2 clips"));
    facediff(&with_small(&["synth-data", "--out", s(&held), "--clips", "1", "--seed", "9"]));

    for stage in ["train-expert", "train-motion", "train-codec", "train-unet"] {
        let out = facediff(&with_small(&[stage, "--data", s(&data), "--models", s(&models)]));
        assert!(out.contains("final_loss = "), "{stage} printed {out}");
    }
    for sub in ["expert", "motion", "codec", "unet"] {
        assert!(models.join(sub).join("config.txt").is_file(), "missing {sub} config");
    }

    let wav = held.join("clip_000.wav");
    let reference = held.join("clip_000").join("frame_0000.ppm");
    let report = facediff(&["generate", "--audio", s(&wav), "--reference", s(&reference), "--models", s(&models), "--out", s(&video), "--seed", "3"]);
    assert!(report.contains("frames = 10"), "{report}");
    assert!(video.join("expression.coef").is_file() && video.join("pose.coef").is_file());

    let scored = facediff(&["evaluate", "--video", s(&video), "--audio", s(&wav), "--models", s(&models), "--out", s(&eval)]);
    assert!(scored.contains("beat_align") && scored.contains("sync_score"), "{scored}");
    let csv = std::fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("metric,value"));

    let table = facediff(&with_small(&["ablate", "--data", s(&data), "--held-out", s(&held), "--out", s(&dir.path().join("abl")), "--arms", "full,concat_unet_conditions"]));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "{table}");
    assert!(lines[1].starts_with("full,") && lines[2].starts_with("concat_unet_conditions,"));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_facediff"))
        .args(["generate", "--audio", "missing.wav", "--reference", "missing.ppm", "--models", s(dir.path()), "--out", s(&dir.path().join("o"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let out = Command::new(env!("CARGO_BIN_EXE_facediff")).args(["ablate", "--data", "d", "--held-out", "h", "--out", "o", "--arms", "bogus"]).output().unwrap();
    assert!(!out.status.success());
}
