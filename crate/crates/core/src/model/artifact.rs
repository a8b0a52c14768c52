use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FloatModel, LayerParams, LayerSpec, ModelError, Shape};
use crate::artifact::{self, ArtifactError, PayloadReader};
use crate::features::{FeatureStats, MfccConfig};

const MAGIC: &[u8; 4] = b"KWSF";
const VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    class_labels: Vec<String>,
    mfcc_config: MfccConfig,
    feature_stats: FeatureStats,
}

/// JSON header followed by little-endian f32 weights then biases, per layer.
pub fn save_model(model: &FloatModel) -> Vec<u8> {
    let header = Header {
        input_shape: model.input_shape,
        layers: model.layers.clone(),
        class_labels: model.class_labels.clone(),
        mfcc_config: model.mfcc_config.clone(),
        feature_stats: model.feature_stats.clone(),
    };
    let mut payload = Vec::with_capacity(model.param_count() * 4);
    for p in &model.params {
        for &v in p.weight.iter().chain(&p.bias) {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    artifact::encode(MAGIC, VERSION, serde_json::to_value(header).unwrap(), &payload)
}

pub fn load_model(bytes: &[u8]) -> Result<FloatModel, ModelError> {
    let (header, payload) = artifact::decode(bytes, MAGIC, VERSION)?;
    let header: Header =
        serde_json::from_value(header).map_err(|e| ArtifactError::CorruptArtifact(format!("header fields: {e}")))?;
    let mut reader = PayloadReader::new(payload);
    let mut params = Vec::with_capacity(header.layers.len());
    for layer in &header.layers {
        let (nw, nb) = layer.param_counts();
        let weight = reader.f32s(nw)?.into_iter().map(f64::from).collect();
        let bias = reader.f32s(nb)?.into_iter().map(f64::from).collect();
        params.push(LayerParams { weight, bias });
    }
    reader.finish()?;
    super::validate_stack(header.input_shape, &header.layers)?;
    Ok(FloatModel {
        input_shape: header.input_shape,
        layers: header.layers,
        params,
        class_labels: header.class_labels,
        mfcc_config: header.mfcc_config,
        feature_stats: header.feature_stats,
    })
}

pub fn save_model_file(model: &FloatModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, save_model(model)).map_err(|e| ModelError::Artifact(e.into()))
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<FloatModel, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Artifact(e.into()))?;
    load_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::MfccMatrix;
    use crate::model::default_architecture;

    fn model() -> FloatModel {
        let labels: Vec<String> = ["BLUE", "RED", "WAKE UP"].iter().map(|s| s.to_string()).collect();
        let mut m = default_architecture(&labels, 5).unwrap();
        m.feature_stats.mean = (0..13).map(|i| i as f64 * 0.1 - 0.7).collect();
        m.feature_stats.std = (0..13).map(|i| 1.0 + i as f64 / 3.0).collect();
        m
    }

    #[test]
    fn round_trip_gives_identical_probs() {
        let m = model();
        let back = load_model(&save_model(&m)).unwrap();
        assert_eq!(back, m);
        let x = MfccMatrix::new((0..98 * 13).map(|i| (i as f64 * 0.01).sin() * 5.0).collect(), 98, 13).unwrap();
        let a = m.forward(&x).unwrap();
        let b = back.forward(&x).unwrap();
        assert!(a.probs.iter().zip(&b.probs).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn truncated_is_corrupt() {
        let bytes = save_model(&model());
        for cut in [10, bytes.len() / 2, bytes.len() - 4] {
            assert!(matches!(
                load_model(&bytes[..cut]),
                Err(ModelError::Artifact(ArtifactError::CorruptArtifact(_)))
            ));
        }
    }

    #[test]
    fn unknown_version_is_reported() {
        let m = model();
        let header = serde_json::json!({
            "input_shape": m.input_shape,
            "layers": m.layers,
            "class_labels": m.class_labels,
            "mfcc_config": m.mfcc_config,
            "feature_stats": m.feature_stats,
        });
        let bytes = artifact::encode(MAGIC, 99, header, &[]);
        assert!(matches!(
            load_model(&bytes),
            Err(ModelError::Artifact(ArtifactError::VersionMismatch { found: 99, .. }))
        ));
    }
}
