//! Seeded synthetic keyword audio: each class is a distinct tone, chord,
//! amplitude-modulated tone or chirp placed at a random offset over low
//! background noise. Used for desk-scale training and streaming fixtures.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{ingest_dataset, write_wav, AudioClip, AudioError, DatasetManifest, CLIP_SAMPLES, SAMPLE_RATE_HZ};

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    /// Sum of steady sinusoids.
    Tones(Vec<f64>),
    /// Sinusoid with its amplitude modulated at `rate_hz`.
    Am { freq_hz: f64, rate_hz: f64 },
    /// Linear frequency sweep.
    Chirp { from_hz: f64, to_hz: f64 },
    /// Background only; some clips are exact silence.
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClass {
    pub label: String,
    pub pattern: Pattern,
}

fn class(label: &str, pattern: Pattern) -> SynthClass {
    SynthClass {
        label: label.to_string(),
        pattern,
    }
}

/// Ten classes: nine command words and a background class.
pub fn default_classes() -> Vec<SynthClass> {
    vec![
        class("WAKE UP", Pattern::Tones(vec![600.0, 1800.0])),
        class("BLUE", Pattern::Tones(vec![1000.0])),
        class("ON", Pattern::Tones(vec![2500.0])),
        class("LED", Pattern::Tones(vec![400.0, 3200.0])),
        class(
            "RED",
            Pattern::Am {
                freq_hz: 1500.0,
                rate_hz: 6.0,
            },
        ),
        class(
            "OFF",
            Pattern::Chirp {
                from_hz: 4000.0,
                to_hz: 6000.0,
            },
        ),
        class(
            "AND",
            Pattern::Am {
                freq_hz: 700.0,
                rate_hz: 10.0,
            },
        ),
        class(
            "CANCEL",
            Pattern::Chirp {
                from_hz: 200.0,
                to_hz: 350.0,
            },
        ),
        class("GREEN", Pattern::Tones(vec![800.0, 1600.0, 3200.0])),
        class("NOISE2", Pattern::Background),
    ]
}

/// Low-level noise, roughly Gaussian (sum of uniforms).
fn background(rng: &mut ChaCha8Rng, n: usize, level: f64) -> Vec<f64> {
    (0..n)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * 0.5 * level)
        .collect()
}

/// One utterance of `duration` samples, peak around `amplitude`, with
/// short fades. Frequencies are jittered by up to 3%.
pub fn utterance(pattern: &Pattern, duration: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = SAMPLE_RATE_HZ as f64;
    let jitter = rng.gen_range(0.97..1.03);
    let phase0 = rng.gen_range(0.0..TAU);
    let fade = (0.03 * sr) as usize;
    let envelope = |i: usize| {
        let a = (i as f64 / fade as f64).min(1.0);
        let r = ((duration - i) as f64 / fade as f64).min(1.0);
        a.min(r)
    };
    (0..duration)
        .map(|i| {
            let t = i as f64 / sr;
            let v = match pattern {
                Pattern::Tones(fs) => {
                    fs.iter().map(|f| (TAU * f * jitter * t + phase0).sin()).sum::<f64>() / fs.len() as f64
                }
                Pattern::Am { freq_hz, rate_hz } => {
                    let m = 0.5 + 0.5 * (TAU * rate_hz * t).sin();
                    m * (TAU * freq_hz * jitter * t + phase0).sin()
                }
                Pattern::Chirp { from_hz, to_hz } => {
                    let len = duration as f64 / sr;
                    let k = (to_hz - from_hz) / len;
                    (TAU * jitter * (from_hz * t + 0.5 * k * t * t) + phase0).sin()
                }
                Pattern::Background => 0.0,
            };
            v * amplitude * envelope(i)
        })
        .collect()
}

fn to_pcm(x: &[f64]) -> Vec<i16> {
    x.iter()
        .map(|v| v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
        .collect()
}

/// A one-second clip of `pattern`. The utterance lasts 0.5 to 0.9 s and may
/// run up to 0.1 s past either edge.
pub fn synth_clip(pattern: &Pattern, rng: &mut ChaCha8Rng) -> Vec<i16> {
    let n = CLIP_SAMPLES;
    if *pattern == Pattern::Background {
        if rng.gen_bool(0.25) {
            return vec![0; n];
        }
        let level = rng.gen_range(20.0..400.0);
        return to_pcm(&background(rng, n, level));
    }
    let level = rng.gen_range(20.0..150.0);
    let mut out = background(rng, n, level);
    let sr = SAMPLE_RATE_HZ as f64;
    let duration = (rng.gen_range(0.5..0.9) * sr) as usize;
    let overhang = (0.1 * sr) as i64;
    let start = rng.gen_range(-overhang..(n as i64 - duration as i64 + overhang));
    let amplitude = rng.gen_range(3000.0..12000.0);
    let u = utterance(pattern, duration, amplitude, rng);
    for (i, v) in u.iter().enumerate() {
        let t = start + i as i64;
        if (0..n as i64).contains(&t) {
            out[t as usize] += v;
        }
    }
    to_pcm(&out)
}

/// Directory name for a label ("WAKE UP" -> "WAKE_UP").
pub fn label_dir(label: &str) -> String {
    label.replace(' ', "_")
}

/// Writes `clips_per_class` WAV files per class under `root/<label>/`.
pub fn write_dataset(
    root: impl AsRef<Path>,
    classes: &[SynthClass],
    clips_per_class: usize,
    seed: u64,
) -> Result<DatasetManifest, AudioError> {
    let root = root.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in classes {
        let dir = root.join(label_dir(&c.label));
        std::fs::create_dir_all(&dir)?;
        for i in 0..clips_per_class {
            let clip = AudioClip::new(synth_clip(&c.pattern, &mut rng), SAMPLE_RATE_HZ);
            write_wav(dir.join(format!("{i:04}.wav")), &clip)?;
        }
    }
    ingest_dataset(root)
}

/// A continuous recording speaking `words` in order: 0.5 s lead-in, each
/// word for 0.7 s followed by a 1.2 s gap, all over low noise. Words not in
/// `classes` are skipped.
pub fn fixture_sequence(classes: &[SynthClass], words: &[&str], seed: u64) -> Vec<i16> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE_HZ as f64;
    let (lead, word, gap) = ((0.5 * sr) as usize, (0.7 * sr) as usize, (1.2 * sr) as usize);
    let total = lead + words.len() * (word + gap) + CLIP_SAMPLES;
    let mut out = background(&mut rng, total, 60.0);
    let mut pos = lead;
    for w in words {
        if let Some(c) = classes.iter().find(|c| c.label.eq_ignore_ascii_case(w)) {
            let u = utterance(&c.pattern, word, 8000.0, &mut rng);
            for (i, v) in u.iter().enumerate() {
                out[pos + i] += v;
            }
        }
        pos += word + gap;
    }
    to_pcm(&out)
}
