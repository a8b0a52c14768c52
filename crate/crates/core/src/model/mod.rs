//! Float 1D CNN: architecture, forward pass, training and artifacts.
//!
//! Activations are channel-major: a `Seq { channels, len }` tensor stores
//! `x[c * len + t]`. MFCC input is read as `n_coeffs` channels over
//! `n_frames` time steps.

mod artifact;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::ArtifactError;
use crate::audio::CLIP_SAMPLES;
use crate::features::{FeatureError, FeatureStats, MfccConfig, MfccMatrix};

pub use artifact::{load_model, load_model_file, save_model, save_model_file};
pub use train::{gradient_check, loss_and_gradients, train, EpochLog, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("class {0:?} has no training clips")]
    EmptyClass(String),
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Seq { channels: usize, len: usize },
    Flat(usize),
}

impl Shape {
    pub fn numel(self) -> usize {
        match self {
            Shape::Seq { channels, len } => channels * len,
            Shape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    Maxpool1d {
        size: usize,
    },
    Flatten,
    Dropout {
        rate: f64,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Relu,
    Softmax,
}

impl LayerSpec {
    pub fn output_shape(&self, input: Shape) -> Result<Shape, ModelError> {
        let err = |m: String| Err(ModelError::InvalidArchitecture(m));
        match (*self, input) {
            (
                LayerSpec::Conv1d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                },
                Shape::Seq { channels, len },
            ) => {
                if in_ch != channels {
                    return err(format!("conv expects {in_ch} channels, got {channels}"));
                }
                if kernel == 0 || stride == 0 || out_ch == 0 || len < kernel {
                    return err(format!("conv k={kernel} s={stride} cannot run on length {len}"));
                }
                Ok(Shape::Seq {
                    channels: out_ch,
                    len: (len - kernel) / stride + 1,
                })
            }
            (LayerSpec::Maxpool1d { size }, Shape::Seq { channels, len }) => {
                if size == 0 || len < size {
                    return err(format!("pool size {size} on length {len}"));
                }
                Ok(Shape::Seq {
                    channels,
                    len: len / size,
                })
            }
            (LayerSpec::Flatten, s) => Ok(Shape::Flat(s.numel())),
            (LayerSpec::Dropout { rate }, s) => {
                if !(0.0..1.0).contains(&rate) {
                    return err(format!("dropout rate {rate}"));
                }
                Ok(s)
            }
            (LayerSpec::Relu, s) => Ok(s),
            (LayerSpec::Dense { in_dim, out_dim }, Shape::Flat(n)) => {
                if n != in_dim || out_dim == 0 {
                    return err(format!("dense expects {in_dim} inputs, got {n}"));
                }
                Ok(Shape::Flat(out_dim))
            }
            (LayerSpec::Softmax, Shape::Flat(n)) => Ok(Shape::Flat(n)),
            (layer, shape) => err(format!("{layer:?} cannot follow a {shape:?} tensor")),
        }
    }

    /// (weight count, bias count).
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv1d {
                in_ch, out_ch, kernel, ..
            } => (out_ch * in_ch * kernel, out_ch),
            LayerSpec::Dense { in_dim, out_dim } => (out_dim * in_dim, out_dim),
            _ => (0, 0),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv1d { in_ch, kernel, .. } => in_ch * kernel,
            LayerSpec::Dense { in_dim, .. } => in_dim,
            _ => 0,
        }
    }
}

/// Shapes of every tensor in a stack: input first, then each layer output.
/// The stack must end in softmax.
pub fn validate_stack(input: Shape, layers: &[LayerSpec]) -> Result<Vec<Shape>, ModelError> {
    let mut shapes = Vec::with_capacity(layers.len() + 1);
    shapes.push(input);
    for layer in layers {
        let next = layer.output_shape(*shapes.last().unwrap())?;
        shapes.push(next);
    }
    if layers.last() != Some(&LayerSpec::Softmax) {
        return Err(ModelError::InvalidArchitecture("last layer must be softmax".into()));
    }
    if layers[..layers.len() - 1].contains(&LayerSpec::Softmax) {
        return Err(ModelError::InvalidArchitecture("softmax only allowed last".into()));
    }
    Ok(shapes)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    fn zeros_for(spec: &LayerSpec) -> Self {
        let (w, b) = spec.param_counts();
        Self {
            weight: vec![0.0; w],
            bias: vec![0.0; b],
        }
    }
}

/// Layer stack builder that infers input sizes from the running shape.
#[derive(Debug, Clone)]
pub struct ArchitectureBuilder {
    input: Shape,
    current: Shape,
    layers: Vec<LayerSpec>,
    error: Option<String>,
}

impl ArchitectureBuilder {
    pub fn new(input: Shape) -> Self {
        Self {
            input,
            current: input,
            layers: Vec::new(),
            error: None,
        }
    }

    fn push(mut self, layer: LayerSpec) -> Self {
        if self.error.is_none() {
            match layer.output_shape(self.current) {
                Ok(s) => {
                    self.current = s;
                    self.layers.push(layer);
                }
                Err(e) => self.error = Some(e.to_string()),
            }
        }
        self
    }

    pub fn current_shape(&self) -> Shape {
        self.current
    }

    pub fn conv1d(self, out_ch: usize, kernel: usize, stride: usize) -> Self {
        let in_ch = match self.current {
            Shape::Seq { channels, .. } => channels,
            Shape::Flat(_) => 0,
        };
        self.push(LayerSpec::Conv1d {
            in_ch,
            out_ch,
            kernel,
            stride,
        })
    }

    pub fn maxpool(self, size: usize) -> Self {
        self.push(LayerSpec::Maxpool1d { size })
    }

    pub fn relu(self) -> Self {
        self.push(LayerSpec::Relu)
    }

    pub fn flatten(self) -> Self {
        self.push(LayerSpec::Flatten)
    }

    pub fn dropout(self, rate: f64) -> Self {
        self.push(LayerSpec::Dropout { rate })
    }

    pub fn dense(self, out_dim: usize) -> Self {
        let in_dim = self.current.numel();
        self.push(LayerSpec::Dense { in_dim, out_dim })
    }

    pub fn softmax(self) -> Self {
        self.push(LayerSpec::Softmax)
    }

    pub fn finish(self) -> Result<(Shape, Vec<LayerSpec>), ModelError> {
        if let Some(e) = self.error {
            return Err(ModelError::InvalidArchitecture(e));
        }
        validate_stack(self.input, &self.layers)?;
        Ok((self.input, self.layers))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatModel {
    pub input_shape: Shape,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<LayerParams>,
    pub class_labels: Vec<String>,
    pub mfcc_config: MfccConfig,
    pub feature_stats: FeatureStats,
}

/// Input shape for MFCC matrices of one-second clips under `config`.
pub fn input_shape_for(config: &MfccConfig) -> Shape {
    Shape::Seq {
        channels: config.n_coeffs,
        len: config.n_frames(CLIP_SAMPLES),
    }
}

/// The default two-conv topology for `class_labels`, randomly initialized.
pub fn default_architecture(class_labels: &[String], seed: u64) -> Result<FloatModel, ModelError> {
    let config = MfccConfig::default();
    let (input, layers) = ArchitectureBuilder::new(input_shape_for(&config))
        .conv1d(8, 3, 1)
        .relu()
        .maxpool(2)
        .conv1d(16, 3, 1)
        .relu()
        .maxpool(2)
        .flatten()
        .dropout(0.25)
        .dense(class_labels.len())
        .softmax()
        .finish()?;
    FloatModel::new(input, layers, class_labels.to_vec(), config, seed)
}

impl FloatModel {
    /// Builds a model with fan-in scaled uniform weights and zero biases.
    /// Weights are rounded to f32 so the float32 artifact is lossless.
    pub fn new(
        input_shape: Shape,
        layers: Vec<LayerSpec>,
        class_labels: Vec<String>,
        mfcc_config: MfccConfig,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let shapes = validate_stack(input_shape, &layers)?;
        if class_labels.len() < 2 {
            return Err(ModelError::InvalidArchitecture("need at least two classes".into()));
        }
        let out = shapes.last().unwrap().numel();
        if out != class_labels.len() {
            return Err(ModelError::InvalidArchitecture(format!(
                "model outputs {out} classes but {} labels given",
                class_labels.len()
            )));
        }
        if let Shape::Seq { channels, .. } = input_shape {
            if channels != mfcc_config.n_coeffs {
                return Err(ModelError::InvalidArchitecture("input channels != n_coeffs".into()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers
            .iter()
            .map(|l| {
                let mut p = LayerParams::zeros_for(l);
                if !p.weight.is_empty() {
                    let limit = (6.0 / l.fan_in() as f64).sqrt();
                    for w in &mut p.weight {
                        *w = rng.gen_range(-limit..limit) as f32 as f64;
                    }
                }
                p
            })
            .collect();
        let n_coeffs = match input_shape {
            Shape::Seq { channels, .. } => channels,
            Shape::Flat(n) => n,
        };
        Ok(Self {
            input_shape,
            layers,
            params,
            class_labels,
            mfcc_config,
            feature_stats: FeatureStats::identity(n_coeffs),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn shapes(&self) -> Vec<Shape> {
        validate_stack(self.input_shape, &self.layers).expect("model was validated")
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.class_labels.iter().position(|l| l == label)
    }

    /// Scaled, channel-major input tensor for `features`.
    pub fn input_tensor(&self, features: &MfccMatrix) -> Result<Vec<f64>, ModelError> {
        input_tensor(self.input_shape, &self.feature_stats, features)
    }

    /// Pre-softmax scores.
    pub fn logits(&self, features: &MfccMatrix) -> Result<Vec<f64>, ModelError> {
        let x = self.input_tensor(features)?;
        let acts = self.forward_tensor(&x, None);
        Ok(acts[acts.len() - 2].clone())
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, features: &MfccMatrix) -> Result<Prediction, ModelError> {
        let x = self.input_tensor(features)?;
        let mut acts = self.forward_tensor(&x, None);
        Ok(Prediction::from_probs(acts.pop().unwrap(), &self.class_labels))
    }

    /// All activations, input first. Dropout is applied only when `rng` is
    /// given; the masks are returned alongside for backprop.
    pub(crate) fn forward_tensor(&self, input: &[f64], rng: Option<&mut ChaCha8Rng>) -> Vec<Vec<f64>> {
        self.forward_traced(input, rng).acts
    }

    pub(crate) fn forward_traced(&self, input: &[f64], mut rng: Option<&mut ChaCha8Rng>) -> Trace {
        let shapes = self.shapes();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        let mut aux: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        let mut masks: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        acts.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = &acts[i];
            let p = &self.params[i];
            let mut idx = Vec::new();
            let mut mask = Vec::new();
            let y = match *layer {
                LayerSpec::Conv1d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                } => {
                    let Shape::Seq { len, .. } = shapes[i] else {
                        unreachable!()
                    };
                    let Shape::Seq { len: out_len, .. } = shapes[i + 1] else {
                        unreachable!()
                    };
                    conv1d(x, &p.weight, &p.bias, in_ch, out_ch, kernel, stride, len, out_len)
                }
                LayerSpec::Maxpool1d { size } => {
                    let Shape::Seq { channels, len } = shapes[i] else {
                        unreachable!()
                    };
                    let (y, arg) = maxpool(x, channels, len, size);
                    idx = arg;
                    y
                }
                LayerSpec::Flatten => x.clone(),
                LayerSpec::Dropout { rate } => match rng.as_deref_mut() {
                    Some(r) if rate > 0.0 => {
                        let keep = 1.0 - rate;
                        mask = (0..x.len())
                            .map(|_| if r.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        x.iter().zip(&mask).map(|(a, m)| a * m).collect()
                    }
                    _ => x.clone(),
                },
                LayerSpec::Dense { in_dim, out_dim } => dense(x, &p.weight, &p.bias, in_dim, out_dim),
                LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::Softmax => softmax(x),
            };
            aux.push(idx);
            masks.push(mask);
            acts.push(y);
        }
        Trace {
            acts,
            pool_argmax: aux,
            dropout_masks: masks,
        }
    }
}

pub(crate) struct Trace {
    pub acts: Vec<Vec<f64>>,
    pub pool_argmax: Vec<Vec<usize>>,
    pub dropout_masks: Vec<Vec<f64>>,
}

pub(crate) fn input_tensor(shape: Shape, stats: &FeatureStats, features: &MfccMatrix) -> Result<Vec<f64>, ModelError> {
    let Shape::Seq { channels, len } = shape else {
        return Err(ModelError::ShapeMismatch("model input must be a sequence".into()));
    };
    if features.n_coeffs != channels || features.n_frames != len {
        return Err(ModelError::ShapeMismatch(format!(
            "model expects {len}x{channels} features, got {}x{}",
            features.n_frames, features.n_coeffs
        )));
    }
    if stats.n_coeffs() != channels {
        return Err(ModelError::ShapeMismatch("feature stats do not match input".into()));
    }
    let mut x = vec![0.0; channels * len];
    for t in 0..len {
        for c in 0..channels {
            x[c * len + t] = stats.scale_value(c, features.get(t, c));
        }
    }
    Ok(x)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    len: usize,
    out_len: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; out_ch * out_len];
    for o in 0..out_ch {
        for t in 0..out_len {
            let mut acc = bias[o];
            for i in 0..in_ch {
                let w = &weight[(o * in_ch + i) * kernel..(o * in_ch + i + 1) * kernel];
                let xs = &x[i * len + t * stride..i * len + t * stride + kernel];
                acc += w.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            }
            y[o * out_len + t] = acc;
        }
    }
    y
}

fn maxpool(x: &[f64], channels: usize, len: usize, size: usize) -> (Vec<f64>, Vec<usize>) {
    let out_len = len / size;
    let mut y = Vec::with_capacity(channels * out_len);
    let mut arg = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        for t in 0..out_len {
            let base = c * len + t * size;
            let mut best = base;
            for j in base + 1..base + size {
                if x[j] > x[best] {
                    best = j;
                }
            }
            y.push(x[best]);
            arg.push(best);
        }
    }
    (y, arg)
}

fn dense(x: &[f64], weight: &[f64], bias: &[f64], in_dim: usize, out_dim: usize) -> Vec<f64> {
    (0..out_dim)
        .map(|o| {
            bias[o]
                + weight[o * in_dim..(o + 1) * in_dim]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
        })
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub top_index: usize,
    pub top_label: String,
    pub confidence: f64,
}

impl Prediction {
    pub fn from_probs(probs: Vec<f64>, labels: &[String]) -> Self {
        let top_index = argmax(&probs);
        Self {
            confidence: probs[top_index],
            top_label: labels[top_index].clone(),
            top_index,
            probs,
        }
    }
}
