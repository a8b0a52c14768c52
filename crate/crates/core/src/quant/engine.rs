use std::ops::Range;
use std::sync::Arc;

use super::{ArenaPlan, FixedMultiplier, QuantError, QuantOp, QuantizedModel};
use crate::features::MfccMatrix;
use crate::model::{argmax, softmax_in_place, Prediction, Shape};

/// A private arena for one quantized model. After construction,
/// [`InferenceContext::forward_into`] does not touch the heap.
#[derive(Debug, Clone)]
pub struct InferenceContext {
    model: Arc<QuantizedModel>,
    plan: ArenaPlan,
    arena: Vec<i8>,
}

impl InferenceContext {
    pub fn new(model: Arc<QuantizedModel>, budget_bytes: usize) -> Result<Self, QuantError> {
        model.validate()?;
        let plan = model.plan_arena(budget_bytes)?;
        let arena = vec![0; plan.total_bytes];
        Ok(Self { model, plan, arena })
    }

    pub fn model(&self) -> &QuantizedModel {
        &self.model
    }

    pub fn plan(&self) -> &ArenaPlan {
        &self.plan
    }

    pub fn arena_bytes(&self) -> usize {
        self.arena.len()
    }

    /// Dequantized logits into `out` (one per class).
    pub fn logits_into(&mut self, features: &MfccMatrix, out: &mut [f64]) -> Result<(), QuantError> {
        run(&self.model, &self.plan, &mut self.arena, features, out)
    }

    /// Class probabilities into `probs`; returns the top index.
    pub fn forward_into(&mut self, features: &MfccMatrix, probs: &mut [f64]) -> Result<usize, QuantError> {
        self.logits_into(features, probs)?;
        softmax_in_place(probs);
        Ok(argmax(probs))
    }

    pub fn predict(&mut self, features: &MfccMatrix) -> Result<Prediction, QuantError> {
        let mut probs = vec![0.0; self.model.n_classes()];
        self.forward_into(features, &mut probs)?;
        Ok(Prediction::from_probs(probs, &self.model.class_labels))
    }
}

/// One-shot inference with a freshly planned, unbounded arena.
pub fn quantized_forward(model: &QuantizedModel, features: &MfccMatrix) -> Result<Prediction, QuantError> {
    model.validate()?;
    let plan = model.plan_arena(usize::MAX)?;
    let mut arena = vec![0; plan.total_bytes];
    let mut probs = vec![0.0; model.n_classes()];
    run(model, &plan, &mut arena, features, &mut probs)?;
    softmax_in_place(&mut probs);
    Ok(Prediction::from_probs(probs, &model.class_labels))
}

fn run(
    model: &QuantizedModel,
    plan: &ArenaPlan,
    arena: &mut [i8],
    features: &MfccMatrix,
    out: &mut [f64],
) -> Result<(), QuantError> {
    let Shape::Seq { channels, len } = model.input_shape else {
        return Err(QuantError::ShapeMismatch("model input must be a sequence".into()));
    };
    if features.n_coeffs != channels || features.n_frames != len {
        return Err(QuantError::ShapeMismatch(format!(
            "model expects {len}x{channels} features, got {}x{}",
            features.n_frames, features.n_coeffs
        )));
    }
    if out.len() != model.n_classes() {
        return Err(QuantError::ShapeMismatch(format!(
            "output slice holds {} values, model has {} classes",
            out.len(),
            model.n_classes()
        )));
    }
    if plan.offsets.len() != model.tensors.len() {
        return Err(QuantError::ArenaOverflow("plan does not match model".into()));
    }

    let input = checked(arena.len(), plan.range(0))?;
    let qp = model.input_params();
    let x = &mut arena[input];
    for t in 0..len {
        for c in 0..channels {
            x[c * len + t] = qp.quantize(model.feature_stats.scale_value(c, features.get(t, c)));
        }
    }

    for (i, op) in model.ops.iter().enumerate() {
        let (src, dst) = split_pair(arena, plan.range(i), plan.range(i + 1))?;
        let in_zp = model.tensors[i].params.zero_point;
        let out_zp = model.tensors[i + 1].params.zero_point;
        match op {
            QuantOp::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
                in_len,
                out_len,
                weights,
                bias,
                multiplier,
                relu,
                ..
            } => conv1d(
                src,
                dst,
                ConvDims {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    kernel: *kernel,
                    stride: *stride,
                    in_len: *in_len,
                    out_len: *out_len,
                },
                weights,
                bias,
                Requant::new(*multiplier, in_zp, out_zp, *relu),
            ),
            QuantOp::Dense {
                in_dim,
                out_dim,
                weights,
                bias,
                multiplier,
                relu,
                ..
            } => dense(
                src,
                dst,
                *in_dim,
                *out_dim,
                weights,
                bias,
                Requant::new(*multiplier, in_zp, out_zp, *relu),
            ),
            QuantOp::MaxPool { channels, in_len, size } => maxpool(src, dst, *channels, *in_len, *size),
            QuantOp::Relu => {
                for (d, &s) in dst.iter_mut().zip(src.iter()) {
                    *d = s.max(in_zp.clamp(-128, 127) as i8);
                }
            }
        }
    }

    let last = model.tensors.len() - 1;
    let logits = &arena[checked(arena.len(), plan.range(last))?];
    let op = model.output_params();
    for (o, &q) in out.iter_mut().zip(logits) {
        *o = op.dequantize(q);
    }
    Ok(())
}

fn checked(len: usize, r: Range<usize>) -> Result<Range<usize>, QuantError> {
    if r.end > len {
        return Err(QuantError::ArenaOverflow("buffer past end of arena".into()));
    }
    Ok(r)
}

fn split_pair(arena: &mut [i8], a: Range<usize>, b: Range<usize>) -> Result<(&[i8], &mut [i8]), QuantError> {
    let a = checked(arena.len(), a)?;
    let b = checked(arena.len(), b)?;
    if a.end <= b.start {
        let (lo, hi) = arena.split_at_mut(b.start);
        Ok((&lo[a], &mut hi[..b.len()]))
    } else if b.end <= a.start {
        let (lo, hi) = arena.split_at_mut(a.start);
        Ok((&hi[..a.len()], &mut lo[b]))
    } else {
        Err(QuantError::ArenaOverflow("input and output buffers overlap".into()))
    }
}

struct ConvDims {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    in_len: usize,
    out_len: usize,
}

#[derive(Clone, Copy)]
struct Requant {
    multiplier: FixedMultiplier,
    in_zp: i32,
    out_zp: i32,
    lo: i32,
}

impl Requant {
    fn new(multiplier: FixedMultiplier, in_zp: i32, out_zp: i32, relu: bool) -> Self {
        let lo = if relu { out_zp.max(-128) } else { -128 };
        Self {
            multiplier,
            in_zp,
            out_zp,
            lo,
        }
    }

    fn output(self, acc: i32) -> i8 {
        (self.out_zp + self.multiplier.apply(acc)).clamp(self.lo, 127) as i8
    }
}

fn conv1d(x: &[i8], y: &mut [i8], d: ConvDims, weights: &[i8], bias: &[i32], rq: Requant) {
    for o in 0..d.out_ch {
        for t in 0..d.out_len {
            let mut acc = bias[o];
            for i in 0..d.in_ch {
                let w = &weights[(o * d.in_ch + i) * d.kernel..(o * d.in_ch + i + 1) * d.kernel];
                let start = i * d.in_len + t * d.stride;
                for (&wk, &xk) in w.iter().zip(&x[start..start + d.kernel]) {
                    acc += (xk as i32 - rq.in_zp) * wk as i32;
                }
            }
            y[o * d.out_len + t] = rq.output(acc);
        }
    }
}

fn dense(x: &[i8], y: &mut [i8], in_dim: usize, out_dim: usize, weights: &[i8], bias: &[i32], rq: Requant) {
    for o in 0..out_dim {
        let mut acc = bias[o];
        for (&w, &v) in weights[o * in_dim..(o + 1) * in_dim].iter().zip(x) {
            acc += (v as i32 - rq.in_zp) * w as i32;
        }
        y[o] = rq.output(acc);
    }
}

fn maxpool(x: &[i8], y: &mut [i8], channels: usize, in_len: usize, size: usize) {
    let out_len = in_len / size;
    for c in 0..channels {
        for t in 0..out_len {
            let base = c * in_len + t * size;
            y[c * out_len + t] = *x[base..base + size].iter().max().unwrap();
        }
    }
}
