use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FixedMultiplier, QuantError, QuantOp, QuantizedModel, TensorSpec};
use crate::artifact::{self, ArtifactError, PayloadReader};
use crate::features::{FeatureStats, MfccConfig};
use crate::model::Shape;

const MAGIC: &[u8; 4] = b"KWSQ";
const VERSION: u64 = 1;

/// Op metadata kept in the JSON header; weights and biases go in the payload.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum OpHeader {
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        in_len: usize,
        out_len: usize,
        weight_scale: f64,
        multiplier: FixedMultiplier,
        relu: bool,
    },
    Maxpool1d {
        channels: usize,
        in_len: usize,
        size: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
        weight_scale: f64,
        multiplier: FixedMultiplier,
        relu: bool,
    },
    Relu,
}

#[derive(Serialize, Deserialize)]
struct Header {
    input_shape: Shape,
    class_labels: Vec<String>,
    mfcc_config: MfccConfig,
    feature_stats: FeatureStats,
    tensors: Vec<TensorSpec>,
    ops: Vec<OpHeader>,
}

/// JSON header, then per op: int8 weights followed by little-endian int32 biases.
pub fn save_quantized(model: &QuantizedModel) -> Vec<u8> {
    let mut payload = Vec::with_capacity(model.weight_bytes());
    let ops = model
        .ops
        .iter()
        .map(|op| match op {
            QuantOp::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                in_len,
                out_len,
                weights,
                weight_scale,
                bias,
                multiplier,
                relu,
            } => {
                push_params(&mut payload, weights, bias);
                OpHeader::Conv1d {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    kernel: *kernel,
                    stride: *stride,
                    in_len: *in_len,
                    out_len: *out_len,
                    weight_scale: *weight_scale,
                    multiplier: *multiplier,
                    relu: *relu,
                }
            }
            QuantOp::MaxPool { channels, in_len, size } => OpHeader::Maxpool1d {
                channels: *channels,
                in_len: *in_len,
                size: *size,
            },
            QuantOp::Dense {
                in_dim,
                out_dim,
                weights,
                weight_scale,
                bias,
                multiplier,
                relu,
            } => {
                push_params(&mut payload, weights, bias);
                OpHeader::Dense {
                    in_dim: *in_dim,
                    out_dim: *out_dim,
                    weight_scale: *weight_scale,
                    multiplier: *multiplier,
                    relu: *relu,
                }
            }
            QuantOp::Relu => OpHeader::Relu,
        })
        .collect();
    let header = Header {
        input_shape: model.input_shape,
        class_labels: model.class_labels.clone(),
        mfcc_config: model.mfcc_config.clone(),
        feature_stats: model.feature_stats.clone(),
        tensors: model.tensors.clone(),
        ops,
    };
    artifact::encode(MAGIC, VERSION, serde_json::to_value(header).unwrap(), &payload)
}

fn push_params(out: &mut Vec<u8>, weights: &[i8], bias: &[i32]) {
    out.extend(weights.iter().map(|&w| w as u8));
    for b in bias {
        out.extend_from_slice(&b.to_le_bytes());
    }
}

pub fn load_quantized(bytes: &[u8]) -> Result<QuantizedModel, QuantError> {
    let (header, payload) = artifact::decode(bytes, MAGIC, VERSION)?;
    let header: Header =
        serde_json::from_value(header).map_err(|e| ArtifactError::CorruptArtifact(format!("header fields: {e}")))?;
    let mut reader = PayloadReader::new(payload);
    let mut ops = Vec::with_capacity(header.ops.len());
    for op in header.ops {
        ops.push(match op {
            OpHeader::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                in_len,
                out_len,
                weight_scale,
                multiplier,
                relu,
            } => QuantOp::Conv1d {
                weights: reader.i8s(out_ch * in_ch * kernel)?,
                bias: reader.i32s(out_ch)?,
                in_ch,
                out_ch,
                kernel,
                stride,
                in_len,
                out_len,
                weight_scale,
                multiplier,
                relu,
            },
            OpHeader::Maxpool1d { channels, in_len, size } => QuantOp::MaxPool { channels, in_len, size },
            OpHeader::Dense {
                in_dim,
                out_dim,
                weight_scale,
                multiplier,
                relu,
            } => QuantOp::Dense {
                weights: reader.i8s(in_dim * out_dim)?,
                bias: reader.i32s(out_dim)?,
                in_dim,
                out_dim,
                weight_scale,
                multiplier,
                relu,
            },
            OpHeader::Relu => QuantOp::Relu,
        });
    }
    reader.finish()?;
    let model = QuantizedModel {
        input_shape: header.input_shape,
        class_labels: header.class_labels,
        mfcc_config: header.mfcc_config,
        feature_stats: header.feature_stats,
        tensors: header.tensors,
        ops,
    };
    model
        .validate()
        .map_err(|e| ArtifactError::CorruptArtifact(e.to_string()))?;
    if model.ops.iter().any(|op| match op {
        QuantOp::Conv1d { weights, .. } | QuantOp::Dense { weights, .. } => weights.contains(&i8::MIN),
        _ => false,
    }) {
        return Err(ArtifactError::CorruptArtifact("weight -128 in symmetric tensor".into()).into());
    }
    Ok(model)
}

pub fn save_quantized_file(model: &QuantizedModel, path: impl AsRef<Path>) -> Result<usize, QuantError> {
    let bytes = save_quantized(model);
    std::fs::write(path, &bytes).map_err(ArtifactError::from)?;
    Ok(bytes.len())
}

pub fn load_quantized_file(path: impl AsRef<Path>) -> Result<QuantizedModel, QuantError> {
    let bytes = std::fs::read(path).map_err(ArtifactError::from)?;
    load_quantized(&bytes)
}
