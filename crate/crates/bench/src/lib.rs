//! Inputs shared by the benchmarks.

use std::sync::Arc;

use kwspot_core::audio::CLIP_SAMPLES;
use kwspot_core::features::extract_mfcc;
use kwspot_core::model::default_architecture;
use kwspot_core::quant::{calibrate, quantize_model};
use kwspot_core::synth::{default_classes, fixture_sequence};
use kwspot_core::{FloatModel, MfccConfig, MfccMatrix, QuantizedModel};

/// A few seconds of synthetic command audio.
pub fn recording() -> Vec<i16> {
    fixture_sequence(&default_classes(), &["wake up", "blue", "on", "led"], 1)
}

/// One-second clip cut from [`recording`].
pub fn clip() -> Vec<i16> {
    recording()[8000..8000 + CLIP_SAMPLES].to_vec()
}

pub fn features() -> MfccMatrix {
    extract_mfcc(&clip(), &MfccConfig::default()).unwrap()
}

/// Untrained default network over 23 labels with its quantized twin.
pub fn models() -> (FloatModel, Arc<QuantizedModel>) {
    let labels: Vec<String> = (0..23).map(|i| format!("k{i}")).collect();
    let model = default_architecture(&labels, 1).unwrap();
    let audio = recording();
    let rep: Vec<MfccMatrix> = audio
        .chunks_exact(CLIP_SAMPLES)
        .map(|c| extract_mfcc(c, &model.mfcc_config).unwrap())
        .collect();
    let q = quantize_model(&model, &calibrate(&model, &rep).unwrap()).unwrap();
    (model, Arc::new(q))
}
