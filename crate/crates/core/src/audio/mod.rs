//! PCM clips, WAV I/O, dataset ingestion and the streaming window buffer.

mod dataset;
mod stream;
mod wav;

use std::path::PathBuf;

pub use dataset::{ingest_dataset, DatasetManifest};
pub use stream::{
    stream_windows, window_count, PcmReader, RingBuffer, SampleSource, SliceSource, StreamWindow, StreamWindows,
    WindowStream,
};
pub use wav::{load_wav, read_wav, write_wav, write_wav_samples};

/// Canonical sample rate; other rates are rejected rather than resampled.
pub const SAMPLE_RATE_HZ: u32 = 16_000;
/// Samples in one analysis window (one second).
pub const CLIP_SAMPLES: usize = SAMPLE_RATE_HZ as usize;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("expected {expected} Hz, got {found} Hz")]
    WrongSampleRate { expected: u32, found: u32 },
    #[error("dataset at {0} contains no readable clips")]
    EmptyDataset(PathBuf),
    #[error("hop must be within [50, 1000] ms, got {0}")]
    InvalidHop(u32),
    #[error("sample source closed")]
    SourceClosed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono PCM-16 clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioClip {
    pub samples: Vec<i16>,
    pub sample_rate_hz: u32,
    pub label: Option<String>,
    pub source_path: Option<PathBuf>,
}

impl AudioClip {
    pub fn new(samples: Vec<i16>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
            label: None,
            source_path: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn duration_ms(&self) -> u64 {
        self.samples.len() as u64 * 1000 / self.sample_rate_hz.max(1) as u64
    }
}

/// Brings a 16 kHz clip to exactly one second.
///
/// Short clips are zero-padded symmetrically, with the odd sample going to
/// the back; long clips are center-cropped.
pub fn normalize_length(clip: AudioClip) -> Result<AudioClip, AudioError> {
    if clip.sample_rate_hz != SAMPLE_RATE_HZ {
        return Err(AudioError::WrongSampleRate {
            expected: SAMPLE_RATE_HZ,
            found: clip.sample_rate_hz,
        });
    }
    let len = clip.samples.len();
    let samples = match len.cmp(&CLIP_SAMPLES) {
        std::cmp::Ordering::Equal => return Ok(clip),
        std::cmp::Ordering::Less => {
            let front = (CLIP_SAMPLES - len) / 2;
            let mut out = vec![0i16; CLIP_SAMPLES];
            out[front..front + len].copy_from_slice(&clip.samples);
            out
        }
        std::cmp::Ordering::Greater => {
            let start = (len - CLIP_SAMPLES) / 2;
            clip.samples[start..start + CLIP_SAMPLES].to_vec()
        }
    };
    Ok(AudioClip { samples, ..clip })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(n: usize) -> Vec<i16> {
        (0..n).map(|i| (i % 30_000) as i16 + 1).collect()
    }

    #[test]
    fn full_length_is_unchanged() {
        let clip = AudioClip::new(ramp(16_000), 16_000);
        assert_eq!(normalize_length(clip.clone()).unwrap(), clip);
    }

    #[test]
    fn short_clip_padded_symmetrically() {
        let src = ramp(9_600);
        let out = normalize_length(AudioClip::new(src.clone(), 16_000)).unwrap();
        assert_eq!(out.samples.len(), 16_000);
        assert!(out.samples[..3_200].iter().all(|&s| s == 0));
        assert_eq!(&out.samples[3_200..12_800], &src[..]);
        assert!(out.samples[12_800..].iter().all(|&s| s == 0));
    }

    #[test]
    fn odd_padding_goes_to_back() {
        let out = normalize_length(AudioClip::new(vec![7; 15_999], 16_000)).unwrap();
        assert_eq!(out.samples[0], 7);
        assert_eq!(out.samples[15_999], 0);
    }

    #[test]
    fn long_clip_center_cropped() {
        let src = ramp(20_000);
        let out = normalize_length(AudioClip::new(src.clone(), 16_000)).unwrap();
        assert_eq!(out.samples, src[2_000..18_000].to_vec());
    }

    #[test]
    fn wrong_rate_rejected() {
        let err = normalize_length(AudioClip::new(vec![0; 8_000], 8_000)).unwrap_err();
        assert!(matches!(err, AudioError::WrongSampleRate { found: 8_000, .. }));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(len in 0usize..40_000) {
            let once = normalize_length(AudioClip::new(ramp(len), 16_000)).unwrap();
            let twice = normalize_length(once.clone()).unwrap();
            prop_assert_eq!(once.samples.len(), CLIP_SAMPLES);
            prop_assert_eq!(once, twice);
        }
    }
}
