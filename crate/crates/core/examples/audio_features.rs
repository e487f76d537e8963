//! Synthesize speech-like audio, round-trip it through a WAV file, and
//! extract frame-aligned filterbank features and onset beats.

use facediff::audiofeat::{self, AudioEvent};

fn main() -> facediff::Result<()> {
    let events = [
        AudioEvent::Tone { start_frame: 2, frames: 10, frequency: 220.0, amplitude: 0.4 },
        AudioEvent::Click { frame: 15, amplitude: 0.8 },
        AudioEvent::Tone { start_frame: 20, frames: 12, frequency: 880.0, amplitude: 0.3 },
    ];
    let wave = audiofeat::synth_waveform(&events, 1.4, 5)?;
    let dir = std::env::temp_dir().join("facediff_audio_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("speech.wav");
    audiofeat::write_wav(&path, &wave)?;
    let wave = audiofeat::read_wav(&path)?;
    println!("{:.2}s at {} Hz, {} video frames", wave.duration_secs(), wave.sample_rate, wave.frame_count());

    let feats = audiofeat::extract_features(&wave, wave.frame_count(), 16)?;
    println!("features: {} frames x {} bands", feats.frames(), feats.dim());
    let loudest: Vec<String> = feats
        .features
        .to_vec2::<f64>()?
        .iter()
        .map(|row| {
            let (k, top) = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            if row.iter().all(|v| v == top) { "-".to_string() } else { k.to_string() }
        })
        .collect();
    println!("dominant band per frame (- for silence): {}", loudest.join(" "));
    println!("onset beats at frames {:?}", audiofeat::detect_audio_beats(&wave));
    Ok(())
}
