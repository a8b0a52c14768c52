//! Post-training int8 quantization and a fixed-point inference engine that
//! runs out of a single preplanned arena.
//!
//! Weights are symmetric per tensor (zero point 0, values in [-127, 127]),
//! activations are asymmetric over [-128, 127], biases are int32 at
//! `input_scale * weight_scale`.

mod arena;
mod artifact;
mod engine;

use serde::{Deserialize, Serialize};

use crate::artifact::ArtifactError;
use crate::features::{FeatureStats, MfccConfig, MfccMatrix};
use crate::model::{FloatModel, LayerSpec, ModelError, Shape};

pub use arena::{plan_buffers, ArenaPlan, BufferRequest};
pub use artifact::{load_quantized, load_quantized_file, save_quantized, save_quantized_file};
pub use engine::{quantized_forward, InferenceContext};

/// Smallest width given to a calibrated range.
pub const MIN_RANGE: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum QuantError {
    #[error("calibration set is empty")]
    EmptyCalibrationSet,
    #[error("no calibrated range for activation tensor {index}")]
    UncalibratedTensor { index: usize },
    #[error("needs {required} bytes but the budget is {budget} bytes")]
    BudgetExceeded { required: usize, budget: usize },
    #[error("arena overflow: {0}")]
    ArenaOverflow(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// Affine mapping `x ~ scale * (q - zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: i32) -> Self {
        Self { scale, zero_point }
    }

    /// Activation parameters for `[min, max]`, widened to contain zero.
    pub fn asymmetric(min: f64, max: f64) -> Self {
        let (min, max) = widen(min, max);
        let scale = (max - min) / 255.0;
        let zero_point = (-128.0 - min / scale).round().clamp(-128.0, 127.0) as i32;
        Self { scale, zero_point }
    }

    /// Weight parameters: zero point 0, `max_abs` maps to 127.
    pub fn symmetric(max_abs: f64) -> Self {
        let scale = if max_abs > 0.0 { max_abs / 127.0 } else { 1.0 };
        Self { scale, zero_point: 0 }
    }

    pub fn quantize(&self, x: f64) -> i8 {
        ((x / self.scale).round() + self.zero_point as f64).clamp(-128.0, 127.0) as i8
    }

    pub fn dequantize(&self, q: i8) -> f64 {
        (q as i32 - self.zero_point) as f64 * self.scale
    }

    /// Real values representable without clamping.
    pub fn range(&self) -> (f64, f64) {
        (self.dequantize(-128), self.dequantize(127))
    }
}

fn widen(min: f64, max: f64) -> (f64, f64) {
    let min = min.min(0.0);
    let mut max = max.max(0.0);
    if max - min < MIN_RANGE {
        max = min + MIN_RANGE;
    }
    (min, max)
}

/// Symmetric int8 weights, clamped to [-127, 127].
pub fn quantize_weights(weights: &[f64]) -> (Vec<i8>, QuantParams) {
    let max_abs = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let params = QuantParams::symmetric(max_abs);
    let q = weights
        .iter()
        .map(|&w| (w / params.scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    (q, params)
}

/// Real multiplier as a Q31 mantissa in [2^30, 2^31) and a power-of-two
/// exponent: `m = mantissa * 2^(exponent - 31)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedMultiplier {
    pub mantissa: i32,
    pub exponent: i32,
}

impl FixedMultiplier {
    pub fn from_real(m: f64) -> Self {
        if m <= 0.0 || !m.is_finite() {
            return Self {
                mantissa: 0,
                exponent: 0,
            };
        }
        let mut exponent = m.log2().floor() as i32 + 1;
        let mut frac = m / 2f64.powi(exponent);
        while frac >= 1.0 {
            frac /= 2.0;
            exponent += 1;
        }
        while frac < 0.5 {
            frac *= 2.0;
            exponent -= 1;
        }
        let mut mantissa = (frac * (1u64 << 31) as f64).round() as i64;
        if mantissa == 1 << 31 {
            mantissa /= 2;
            exponent += 1;
        }
        Self {
            mantissa: mantissa as i32,
            exponent,
        }
    }

    pub fn to_real(self) -> f64 {
        self.mantissa as f64 * 2f64.powi(self.exponent - 31)
    }

    /// `acc * m`, rounded half away from zero.
    pub fn apply(self, acc: i32) -> i32 {
        let prod = acc as i64 * self.mantissa as i64;
        let shift = 31 - self.exponent;
        let v = if shift <= 0 {
            prod.saturating_mul(1i64 << (-shift).min(62))
        } else if shift > 62 {
            0
        } else {
            rounding_shift(prod, shift as u32)
        };
        v.clamp(i32::MIN as i64, i32::MAX as i64) as i32
    }
}

fn rounding_shift(v: i64, shift: u32) -> i64 {
    let half = 1i64 << (shift - 1);
    if v >= 0 {
        (v + half) >> shift
    } else {
        -((-v + half) >> shift)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorRange {
    pub min: f64,
    pub max: f64,
}

/// Calibrated min/max for every float activation, indexed like the
/// model's activations (input first, then one per layer).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivationRanges {
    pub tensors: Vec<Option<TensorRange>>,
}

impl ActivationRanges {
    pub fn get(&self, index: usize) -> Result<TensorRange, QuantError> {
        self.tensors
            .get(index)
            .copied()
            .flatten()
            .ok_or(QuantError::UncalibratedTensor { index })
    }
}

/// Min/max of every activation over `rep_set`, widened to contain zero.
pub fn calibrate(model: &FloatModel, rep_set: &[MfccMatrix]) -> Result<ActivationRanges, QuantError> {
    if rep_set.is_empty() {
        return Err(QuantError::EmptyCalibrationSet);
    }
    let n = model.layers.len() + 1;
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for features in rep_set {
        let x = model.input_tensor(features)?;
        for (i, act) in model.forward_tensor(&x, None).iter().enumerate() {
            for &v in act {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
    }
    let tensors = lo
        .into_iter()
        .zip(hi)
        .map(|(min, max)| {
            let (min, max) = widen(min, max);
            Some(TensorRange { min, max })
        })
        .collect();
    Ok(ActivationRanges { tensors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub len: usize,
    pub params: QuantParams,
}

/// One integer kernel. Op `i` reads tensor `i` and writes tensor `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantOp {
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        in_len: usize,
        out_len: usize,
        weights: Vec<i8>,
        weight_scale: f64,
        bias: Vec<i32>,
        multiplier: FixedMultiplier,
        relu: bool,
    },
    MaxPool {
        channels: usize,
        in_len: usize,
        size: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
        weights: Vec<i8>,
        weight_scale: f64,
        bias: Vec<i32>,
        multiplier: FixedMultiplier,
        relu: bool,
    },
    Relu,
}

impl QuantOp {
    pub fn name(&self) -> &'static str {
        match self {
            QuantOp::Conv1d { relu: true, .. } => "conv1d+relu",
            QuantOp::Conv1d { .. } => "conv1d",
            QuantOp::MaxPool { .. } => "maxpool1d",
            QuantOp::Dense { relu: true, .. } => "dense+relu",
            QuantOp::Dense { .. } => "dense",
            QuantOp::Relu => "relu",
        }
    }

    /// Stored parameter bytes: int8 weights plus int32 biases.
    pub fn param_bytes(&self) -> usize {
        match self {
            QuantOp::Conv1d { weights, bias, .. } | QuantOp::Dense { weights, bias, .. } => {
                weights.len() + 4 * bias.len()
            }
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub input_shape: Shape,
    pub class_labels: Vec<String>,
    pub mfcc_config: MfccConfig,
    pub feature_stats: FeatureStats,
    pub tensors: Vec<TensorSpec>,
    pub ops: Vec<QuantOp>,
}

impl QuantizedModel {
    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn input_params(&self) -> QuantParams {
        self.tensors[0].params
    }

    pub fn output_params(&self) -> QuantParams {
        self.tensors.last().unwrap().params
    }

    pub fn weight_bytes(&self) -> usize {
        self.ops.iter().map(QuantOp::param_bytes).sum()
    }

    /// (op name, parameter bytes) per op.
    pub fn layer_bytes(&self) -> Vec<(&'static str, usize)> {
        self.ops.iter().map(|op| (op.name(), op.param_bytes())).collect()
    }

    /// Activation buffers with their lifetimes in op steps.
    pub fn buffer_requests(&self) -> Vec<BufferRequest> {
        let last = self.ops.len();
        self.tensors
            .iter()
            .enumerate()
            .map(|(k, t)| BufferRequest {
                size: t.len,
                first: k.saturating_sub(1),
                last: k.min(last),
            })
            .collect()
    }

    pub fn plan_arena(&self, budget_bytes: usize) -> Result<ArenaPlan, QuantError> {
        plan_buffers(&self.buffer_requests(), budget_bytes)
    }

    pub fn validate(&self) -> Result<(), QuantError> {
        let bad = |m: String| Err(QuantError::ShapeMismatch(m));
        if self.tensors.len() != self.ops.len() + 1 {
            return bad("tensor count must be op count + 1".into());
        }
        if self.tensors[0].len != self.input_shape.numel() {
            return bad("input tensor size".into());
        }
        if self.tensors.last().unwrap().len != self.class_labels.len() {
            return bad("output tensor size differs from class count".into());
        }
        for (i, op) in self.ops.iter().enumerate() {
            let (n_in, n_out) = (self.tensors[i].len, self.tensors[i + 1].len);
            let ok = match op {
                QuantOp::Conv1d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    in_len,
                    out_len,
                    weights,
                    bias,
                    ..
                } => {
                    *stride > 0
                        && *in_len >= *kernel
                        && (*in_len - *kernel) / *stride + 1 == *out_len
                        && in_ch * in_len == n_in
                        && out_ch * out_len == n_out
                        && weights.len() == out_ch * in_ch * kernel
                        && bias.len() == *out_ch
                }
                QuantOp::MaxPool { channels, in_len, size } => {
                    *size > 0 && channels * in_len == n_in && channels * (in_len / size) == n_out
                }
                QuantOp::Dense {
                    in_dim,
                    out_dim,
                    weights,
                    bias,
                    ..
                } => {
                    *in_dim == n_in && *out_dim == n_out && weights.len() == in_dim * out_dim && bias.len() == *out_dim
                }
                QuantOp::Relu => n_in == n_out,
            };
            if !ok {
                return bad(format!("op {i} ({}) does not fit its tensors", op.name()));
            }
        }
        Ok(())
    }
}

/// Converts `model` using calibrated `ranges`. ReLU directly after a conv or
/// dense layer is folded into it.
pub fn quantize_model(model: &FloatModel, ranges: &ActivationRanges) -> Result<QuantizedModel, QuantError> {
    let shapes = model.shapes();
    let input = ranges.get(0)?;
    let mut tensors = vec![TensorSpec {
        len: shapes[0].numel(),
        params: QuantParams::asymmetric(input.min, input.max),
    }];
    let mut ops = Vec::new();
    let mut i = 0;
    while i < model.layers.len() {
        let in_params = tensors.last().unwrap().params;
        let fused = model.layers.get(i + 1) == Some(&LayerSpec::Relu);
        let out_act = if fused { i + 2 } else { i + 1 };
        let p = &model.params[i];
        let affine = |weight: &[f64], bias: &[f64]| -> Result<_, QuantError> {
            let r = ranges.get(out_act)?;
            let out_params = QuantParams::asymmetric(r.min, r.max);
            let (w, wp) = quantize_weights(weight);
            let bias_scale = in_params.scale * wp.scale;
            let b: Vec<i32> = bias
                .iter()
                .map(|&b| (b / bias_scale).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
                .collect();
            let m = FixedMultiplier::from_real(bias_scale / out_params.scale);
            Ok((w, wp.scale, b, m, out_params))
        };
        match model.layers[i] {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                let (weights, weight_scale, bias, multiplier, out_params) = affine(&p.weight, &p.bias)?;
                let Shape::Seq { len: in_len, .. } = shapes[i] else {
                    unreachable!()
                };
                let Shape::Seq { len: out_len, .. } = shapes[i + 1] else {
                    unreachable!()
                };
                ops.push(QuantOp::Conv1d {
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
                    relu: fused,
                });
                tensors.push(TensorSpec {
                    len: shapes[out_act].numel(),
                    params: out_params,
                });
                i = out_act;
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                let (weights, weight_scale, bias, multiplier, out_params) = affine(&p.weight, &p.bias)?;
                ops.push(QuantOp::Dense {
                    in_dim,
                    out_dim,
                    weights,
                    weight_scale,
                    bias,
                    multiplier,
                    relu: fused,
                });
                tensors.push(TensorSpec {
                    len: shapes[out_act].numel(),
                    params: out_params,
                });
                i = out_act;
            }
            LayerSpec::Maxpool1d { size } => {
                let Shape::Seq { channels, len } = shapes[i] else {
                    unreachable!()
                };
                ops.push(QuantOp::MaxPool {
                    channels,
                    in_len: len,
                    size,
                });
                tensors.push(TensorSpec {
                    len: shapes[i + 1].numel(),
                    params: in_params,
                });
                i += 1;
            }
            LayerSpec::Relu => {
                ops.push(QuantOp::Relu);
                tensors.push(TensorSpec {
                    len: shapes[i + 1].numel(),
                    params: in_params,
                });
                i += 1;
            }
            LayerSpec::Flatten | LayerSpec::Dropout { .. } | LayerSpec::Softmax => i += 1,
        }
    }
    let q = QuantizedModel {
        input_shape: model.input_shape,
        class_labels: model.class_labels.clone(),
        mfcc_config: model.mfcc_config.clone(),
        feature_stats: model.feature_stats.clone(),
        tensors,
        ops,
    };
    q.validate()?;
    Ok(q)
}
