use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, FloatModel, LayerParams, LayerSpec, ModelError, Shape};
use crate::features::{FeatureStats, MfccMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    let p = probs[label];
    if p.is_nan() {
        return f64::NAN;
    }
    -p.max(f64::MIN_POSITIVE).ln()
}

/// Backprop for one example, accumulating into `grads`. Returns the loss
/// and whether the prediction was correct.
fn accumulate(
    model: &FloatModel,
    input: &[f64],
    label: usize,
    rng: Option<&mut ChaCha8Rng>,
    grads: &mut [LayerParams],
) -> (f64, bool) {
    let trace = model.forward_traced(input, rng);
    let shapes = model.shapes();
    let probs = trace.acts.last().unwrap();
    let loss = cross_entropy(probs, label);
    let correct = argmax(probs) == label;

    // gradient w.r.t. the softmax input
    let mut d: Vec<f64> = probs.clone();
    d[label] -= 1.0;

    for i in (0..model.layers.len() - 1).rev() {
        let x = &trace.acts[i];
        let p = &model.params[i];
        let g = &mut grads[i];
        d = match model.layers[i] {
            LayerSpec::Conv1d {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                let Shape::Seq { len, .. } = shapes[i] else {
                    unreachable!()
                };
                let out_len = d.len() / out_ch;
                let mut dx = vec![0.0; x.len()];
                for o in 0..out_ch {
                    for t in 0..out_len {
                        let dy = d[o * out_len + t];
                        if dy == 0.0 {
                            continue;
                        }
                        g.bias[o] += dy;
                        for c in 0..in_ch {
                            let wbase = (o * in_ch + c) * kernel;
                            let xbase = c * len + t * stride;
                            for k in 0..kernel {
                                g.weight[wbase + k] += dy * x[xbase + k];
                                dx[xbase + k] += dy * p.weight[wbase + k];
                            }
                        }
                    }
                }
                dx
            }
            LayerSpec::Maxpool1d { .. } => {
                let mut dx = vec![0.0; x.len()];
                for (dy, &src) in d.iter().zip(&trace.pool_argmax[i]) {
                    dx[src] += dy;
                }
                dx
            }
            LayerSpec::Flatten => d,
            LayerSpec::Dropout { .. } => {
                let mask = &trace.dropout_masks[i];
                if mask.is_empty() {
                    d
                } else {
                    d.iter().zip(mask).map(|(a, m)| a * m).collect()
                }
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                let mut dx = vec![0.0; in_dim];
                for (o, &dy) in d.iter().enumerate().take(out_dim) {
                    g.bias[o] += dy;
                    let row = &p.weight[o * in_dim..(o + 1) * in_dim];
                    let grow = &mut g.weight[o * in_dim..(o + 1) * in_dim];
                    for j in 0..in_dim {
                        grow[j] += dy * x[j];
                        dx[j] += dy * row[j];
                    }
                }
                dx
            }
            LayerSpec::Relu => d.iter().zip(x).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect(),
            LayerSpec::Softmax => unreachable!("softmax is validated to be last"),
        };
    }
    (loss, correct)
}

fn zero_grads(model: &FloatModel) -> Vec<LayerParams> {
    model
        .params
        .iter()
        .map(|p| LayerParams {
            weight: vec![0.0; p.weight.len()],
            bias: vec![0.0; p.bias.len()],
        })
        .collect()
}

/// Cross-entropy loss and its gradient for one example, inference mode.
pub fn loss_and_gradients(
    model: &FloatModel,
    features: &MfccMatrix,
    label: usize,
) -> Result<(f64, Vec<LayerParams>), ModelError> {
    let x = model.input_tensor(features)?;
    let mut grads = zero_grads(model);
    let (loss, _) = accumulate(model, &x, label, None, &mut grads);
    Ok((loss, grads))
}

fn param_mut(model: &mut FloatModel, layer: usize, which: usize, j: usize) -> &mut f64 {
    let p = &mut model.params[layer];
    if which == 0 {
        &mut p.weight[j]
    } else {
        &mut p.bias[j]
    }
}

fn loss_at(model: &FloatModel, x: &[f64], label: usize) -> f64 {
    let acts = model.forward_tensor(x, None);
    cross_entropy(acts.last().unwrap(), label)
}

/// Max relative error between backprop and central differences
/// (eps = 1e-5) over every parameter.
pub fn gradient_check(model: &FloatModel, features: &MfccMatrix, label: usize) -> Result<f64, ModelError> {
    const EPS: f64 = 1e-5;
    let x = model.input_tensor(features)?;
    let (_, analytic) = loss_and_gradients(model, features, label)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (li, grads) in analytic.iter().enumerate() {
        for which in 0..2 {
            let n = if which == 0 {
                probe.params[li].weight.len()
            } else {
                probe.params[li].bias.len()
            };
            for j in 0..n {
                let orig = *param_mut(&mut probe, li, which, j);
                *param_mut(&mut probe, li, which, j) = orig + EPS;
                let plus = loss_at(&probe, &x, label);
                *param_mut(&mut probe, li, which, j) = orig - EPS;
                let minus = loss_at(&probe, &x, label);
                *param_mut(&mut probe, li, which, j) = orig;
                let numeric = (plus - minus) / (2.0 * EPS);
                let a = if which == 0 { grads.weight[j] } else { grads.bias[j] };
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}

struct Adam {
    m: Vec<LayerParams>,
    v: Vec<LayerParams>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &FloatModel) -> Self {
        Self {
            m: zero_grads(model),
            v: zero_grads(model),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [LayerParams], grads: &[LayerParams], lr: f64, scale: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let update = |w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..w.len() {
                let gk = g[k] * scale;
                m[k] = Self::B1 * m[k] + (1.0 - Self::B1) * gk;
                v[k] = Self::B2 * v[k] + (1.0 - Self::B2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                w[k] -= lr * mh / (vh.sqrt() + Self::EPS);
            }
        };
        for i in 0..params.len() {
            update(
                &mut params[i].weight,
                &grads[i].weight,
                &mut self.m[i].weight,
                &mut self.v[i].weight,
            );
            update(
                &mut params[i].bias,
                &grads[i].bias,
                &mut self.m[i].bias,
                &mut self.v[i].bias,
            );
        }
    }
}

/// Minibatch Adam on softmax cross-entropy.
///
/// Feature statistics are computed from `inputs` (the training split) and
/// stored in the returned model. `labels[i]` indexes `model.class_labels`.
pub fn train(
    mut model: FloatModel,
    inputs: &[MfccMatrix],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(FloatModel, Vec<EpochLog>), ModelError> {
    if inputs.len() != labels.len() {
        return Err(ModelError::ShapeMismatch("inputs and labels differ in length".into()));
    }
    let mut seen = vec![false; model.n_classes()];
    for &l in labels {
        *seen
            .get_mut(l)
            .ok_or_else(|| ModelError::ShapeMismatch(format!("label index {l}")))? = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(ModelError::EmptyClass(model.class_labels[missing].clone()));
    }

    model.feature_stats = FeatureStats::from_matrices(inputs)?;
    let tensors = inputs
        .iter()
        .map(|m| model.input_tensor(m))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..tensors.len()).collect();
    let batch = config.batch_size.max(1);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(batch) {
            let mut grads = zero_grads(&model);
            for &i in chunk {
                let (loss, ok) = accumulate(&model, &tensors[i], labels[i], Some(&mut rng), &mut grads);
                total_loss += loss;
                correct += ok as usize;
            }
            adam.step(
                &mut model.params,
                &grads,
                config.learning_rate,
                1.0 / chunk.len() as f64,
            );
        }
        let loss = total_loss / tensors.len() as f64;
        let params_finite = model
            .params
            .iter()
            .all(|p| p.weight.iter().chain(&p.bias).all(|w| w.is_finite()));
        if !loss.is_finite() || !params_finite {
            return Err(ModelError::DivergedLoss { epoch });
        }
        log.push(EpochLog {
            epoch,
            loss,
            accuracy: correct as f64 / tensors.len() as f64,
        });
    }

    for p in &mut model.params {
        for w in p.weight.iter_mut().chain(p.bias.iter_mut()) {
            *w = *w as f32 as f64;
        }
    }
    Ok((model, log))
}
