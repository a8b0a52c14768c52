//! Keyword spotting pipeline: MFCC features, a small 1D CNN, int8
//! post-training quantization with a static arena, a sleep/active command
//! interpreter and the evaluation harness.

pub mod audio;
pub mod eval;
pub mod features;
pub mod interpreter;
pub mod keyword;
pub mod model;
pub mod pipeline;
pub mod quant;
pub mod synth;

mod artifact;

pub use artifact::ArtifactError;
pub use audio::{AudioClip, AudioError, DatasetManifest, StreamWindow};
pub use eval::{ConfusionMatrix, EvalReport, SplitManifest};
pub use features::{FeatureStats, MfccConfig, MfccMatrix};
pub use interpreter::{CommandEvent, InterpreterConfig, InterpreterState, LedState};
pub use keyword::Keyword;
pub use model::{FloatModel, LayerSpec, Prediction};
pub use quant::{ArenaPlan, QuantParams, QuantizedModel};
