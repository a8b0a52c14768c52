//! MFCC front end.
//!
//! Pipeline per clip: pre-emphasis, framing, Hamming window, magnitude
//! spectrum, mel filterbank energies (on power), log with a floor, and an
//! orthonormal DCT-II keeping the first `n_coeffs` coefficients.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{CLIP_SAMPLES, SAMPLE_RATE_HZ};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("invalid MFCC config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} samples, got {found}")]
    WrongLength { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub frame_len_samples: usize,
    pub hop_samples: usize,
    pub fft_size: usize,
    pub n_mel_filters: usize,
    pub n_coeffs: usize,
    pub preemphasis: f64,
    pub mel_low_hz: f64,
    pub mel_high_hz: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_len_samples: 400,
            hop_samples: 160,
            fft_size: 512,
            n_mel_filters: 40,
            n_coeffs: 13,
            preemphasis: 0.97,
            mel_low_hz: 20.0,
            mel_high_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.to_string()));
        if self.frame_len_samples == 0 || self.frame_len_samples > CLIP_SAMPLES {
            return bad("frame_len_samples must be in 1..=16000");
        }
        if self.hop_samples == 0 {
            return bad("hop_samples must be positive");
        }
        if self.fft_size < self.frame_len_samples {
            return bad("fft_size must be >= frame_len_samples");
        }
        if self.n_mel_filters == 0 || self.n_coeffs == 0 || self.n_coeffs > self.n_mel_filters {
            return bad("need 0 < n_coeffs <= n_mel_filters");
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad("preemphasis must be in [0, 1)");
        }
        let nyquist = SAMPLE_RATE_HZ as f64 / 2.0;
        if !(self.mel_low_hz >= 0.0 && self.mel_low_hz < self.mel_high_hz && self.mel_high_hz <= nyquist) {
            return bad("need 0 <= mel_low_hz < mel_high_hz <= sample_rate/2");
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    /// Frames produced for a clip of `n_samples`.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_len_samples {
            0
        } else {
            (n_samples - self.frame_len_samples) / self.hop_samples + 1
        }
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, row-major `n_filters x n_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Vec<f64>,
    n_filters: usize,
    n_bins: usize,
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn filter(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Center frequency of each filter in Hz.
    pub fn center_frequencies(&self) -> &[f64] {
        &self.edges_hz[1..self.edges_hz.len() - 1]
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, e) in out.iter_mut().enumerate().take(self.n_filters) {
            *e = self.filter(m).iter().zip(power).map(|(w, p)| w * p).sum();
        }
    }
}

pub fn mel_filterbank(config: &MfccConfig) -> Result<MelFilterbank, FeatureError> {
    config.validate()?;
    let n = config.n_mel_filters;
    let n_bins = config.n_bins();
    let lo = hz_to_mel(config.mel_low_hz);
    let hi = hz_to_mel(config.mel_high_hz);
    let step = (hi - lo) / (n + 1) as f64;
    let edges_hz: Vec<f64> = (0..n + 2).map(|i| mel_to_hz(lo + step * i as f64)).collect();
    let bin_hz = SAMPLE_RATE_HZ as f64 / config.fft_size as f64;

    let mut weights = vec![0.0; n * n_bins];
    for m in 0..n {
        let (left, center, right) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            weights[m * n_bins + k] = w;
        }
    }
    Ok(MelFilterbank {
        weights,
        n_filters: n,
        n_bins,
        edges_hz,
    })
}

pub fn hamming_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Orthonormal DCT-II basis, row-major `n_out x n_in`.
pub fn dct_ii_matrix(n_out: usize, n_in: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_out * n_in];
    let n = n_in as f64;
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for i in 0..n_in {
            out[k * n_in + i] = scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos();
        }
    }
    out
}

/// Magnitude spectrum of a real frame zero-padded to `fft_size`.
pub fn magnitude_spectrum(frame: &[f64], fft_size: usize) -> Vec<f64> {
    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    let mut out = vec![0.0; fft_size / 2 + 1];
    spectrum_into(&*fft, frame, &mut buf, &mut out);
    out
}

fn spectrum_into(fft: &dyn Fft<f64>, frame: &[f64], buf: &mut [Complex<f64>], out: &mut [f64]) {
    for (i, c) in buf.iter_mut().enumerate() {
        *c = Complex::new(frame.get(i).copied().unwrap_or(0.0), 0.0);
    }
    fft.process(buf);
    for (o, c) in out.iter_mut().zip(buf.iter()) {
        *o = c.norm();
    }
}

/// `n_frames x n_coeffs`, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccMatrix {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_coeffs: usize,
}

impl MfccMatrix {
    pub fn new(values: Vec<f64>, n_frames: usize, n_coeffs: usize) -> Result<Self, FeatureError> {
        if values.len() != n_frames * n_coeffs {
            return Err(FeatureError::ShapeMismatch(format!(
                "{} values for {n_frames}x{n_coeffs}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            n_frames,
            n_coeffs,
        })
    }

    pub fn zeros(n_frames: usize, n_coeffs: usize) -> Self {
        Self {
            values: vec![0.0; n_frames * n_coeffs],
            n_frames,
            n_coeffs,
        }
    }

    pub fn get(&self, frame: usize, coeff: usize) -> f64 {
        self.values[frame * self.n_coeffs + coeff]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.n_coeffs..(frame + 1) * self.n_coeffs]
    }
}

/// Reusable extractor; the filterbank, window, DCT basis and FFT plan are
/// built once.
pub struct MfccExtractor {
    config: MfccConfig,
    filterbank: MelFilterbank,
    window: Vec<f64>,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(config: MfccConfig) -> Result<Self, FeatureError> {
        let filterbank = mel_filterbank(&config)?;
        let window = hamming_window(config.frame_len_samples);
        let dct = dct_ii_matrix(config.n_coeffs, config.n_mel_filters);
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Self {
            config,
            filterbank,
            window,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Log mel energies per frame, `n_frames x n_mel_filters`.
    pub fn log_mel_energies(&self, samples: &[i16]) -> Result<Vec<f64>, FeatureError> {
        if samples.len() != CLIP_SAMPLES {
            return Err(FeatureError::WrongLength {
                expected: CLIP_SAMPLES,
                found: samples.len(),
            });
        }
        let cfg = &self.config;
        let mut emphasized = Vec::with_capacity(samples.len());
        let mut prev = 0.0;
        for (i, &s) in samples.iter().enumerate() {
            let x = s as f64 / 32768.0;
            emphasized.push(if i == 0 { x } else { x - cfg.preemphasis * prev });
            prev = x;
        }

        let n_frames = cfg.n_frames(samples.len());
        let n_mel = cfg.n_mel_filters;
        let mut out = vec![0.0; n_frames * n_mel];
        let mut frame = vec![0.0; cfg.frame_len_samples];
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut power = vec![0.0; cfg.n_bins()];
        for f in 0..n_frames {
            let start = f * cfg.hop_samples;
            for (i, x) in frame.iter_mut().enumerate() {
                *x = emphasized[start + i] * self.window[i];
            }
            spectrum_into(&*self.fft, &frame, &mut buf, &mut power);
            for p in power.iter_mut() {
                *p *= *p;
            }
            let row = &mut out[f * n_mel..(f + 1) * n_mel];
            self.filterbank.apply(&power, row);
            for e in row.iter_mut() {
                *e = e.max(cfg.log_floor).ln();
            }
        }
        Ok(out)
    }

    pub fn extract(&self, samples: &[i16]) -> Result<MfccMatrix, FeatureError> {
        let log_mel = self.log_mel_energies(samples)?;
        let n_mel = self.config.n_mel_filters;
        let n_coeffs = self.config.n_coeffs;
        let n_frames = log_mel.len() / n_mel;
        let mut values = vec![0.0; n_frames * n_coeffs];
        for f in 0..n_frames {
            let row = &log_mel[f * n_mel..(f + 1) * n_mel];
            for k in 0..n_coeffs {
                let basis = &self.dct[k * n_mel..(k + 1) * n_mel];
                values[f * n_coeffs + k] = basis.iter().zip(row).map(|(b, x)| b * x).sum();
            }
        }
        MfccMatrix::new(values, n_frames, n_coeffs)
    }
}

/// One-shot convenience over [`MfccExtractor`].
pub fn extract_mfcc(samples: &[i16], config: &MfccConfig) -> Result<MfccMatrix, FeatureError> {
    MfccExtractor::new(config.clone())?.extract(samples)
}

/// Per-coefficient mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Lower bound on the divisor used by [`feature_scale`].
pub const STD_GUARD: f64 = 1e-6;

impl FeatureStats {
    pub fn identity(n_coeffs: usize) -> Self {
        Self {
            mean: vec![0.0; n_coeffs],
            std: vec![1.0; n_coeffs],
        }
    }

    /// Welford accumulation over every frame of every matrix.
    pub fn from_matrices<'a, I>(matrices: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a MfccMatrix>,
    {
        let mut n_coeffs = None;
        let mut count = 0u64;
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<f64> = Vec::new();
        for m in matrices {
            let c = *n_coeffs.get_or_insert(m.n_coeffs);
            if m.n_coeffs != c {
                return Err(FeatureError::ShapeMismatch("coefficient counts differ".into()));
            }
            if mean.is_empty() {
                mean = vec![0.0; c];
                m2 = vec![0.0; c];
            }
            for f in 0..m.n_frames {
                count += 1;
                for (j, &x) in m.frame(f).iter().enumerate() {
                    let d = x - mean[j];
                    mean[j] += d / count as f64;
                    m2[j] += d * (x - mean[j]);
                }
            }
        }
        if count == 0 {
            return Err(FeatureError::ShapeMismatch("no frames to compute statistics".into()));
        }
        let std = m2.iter().map(|v| (v / count as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn n_coeffs(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn scale_value(&self, coeff: usize, x: f64) -> f64 {
        (x - self.mean[coeff]) / self.std[coeff].max(STD_GUARD)
    }
}

pub fn feature_scale(m: &MfccMatrix, stats: &FeatureStats) -> Result<MfccMatrix, FeatureError> {
    if stats.n_coeffs() != m.n_coeffs || stats.std.len() != m.n_coeffs {
        return Err(FeatureError::ShapeMismatch(format!(
            "stats for {} coefficients, matrix has {}",
            stats.n_coeffs(),
            m.n_coeffs
        )));
    }
    let values = m
        .values
        .iter()
        .enumerate()
        .map(|(i, &x)| stats.scale_value(i % m.n_coeffs, x))
        .collect();
    MfccMatrix::new(values, m.n_frames, m.n_coeffs)
}
