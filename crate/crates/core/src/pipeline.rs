//! Streaming keyword detector: sliding windows over PCM, quantized
//! inference, debouncing and the command interpreter, producing the event
//! stream shared by the CLI `run` command and the WebSocket service.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audio::{AudioError, WindowStream};
use crate::features::{FeatureError, MfccExtractor};
use crate::interpreter::{BlinkMode, CommandEvent, Flags, Interpreter, InterpreterConfig, InterpreterError, Mode};
use crate::keyword::Keyword;
use crate::quant::{InferenceContext, QuantError, QuantizedModel};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Interpreter(#[from] InterpreterError),
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub hop_ms: u32,
    pub threshold: f64,
    pub timeout_ms: u64,
    pub debounce_ms: u64,
    pub budget_bytes: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            hop_ms: 250,
            threshold: 0.60,
            timeout_ms: 10_000,
            debounce_ms: 1000,
            budget_bytes: 196_608,
        }
    }
}

/// One message of the event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceEvent {
    Prediction {
        ts: u64,
        label: String,
        confidence: f64,
        accepted: bool,
    },
    State {
        ts: u64,
        mode: Mode,
        color: u8,
        color_set: Vec<u8>,
        flags: Flags,
    },
    Led {
        ts: u64,
        on: bool,
        rgb_set: Vec<[u8; 3]>,
        blink: BlinkMode,
    },
    Error {
        message: String,
    },
}

impl ServiceEvent {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

pub struct Detector {
    config: DetectorConfig,
    stream: WindowStream,
    extractor: MfccExtractor,
    ctx: InferenceContext,
    interpreter: Interpreter,
    probs: Vec<f64>,
    /// Start time of the last accepted window, per class.
    last_accepted: Vec<Option<u64>>,
}

impl Detector {
    pub fn new(model: Arc<QuantizedModel>, config: DetectorConfig) -> Result<Self, PipelineError> {
        if !(0.0..=1.0).contains(&config.threshold) {
            return Err(PipelineError::InvalidThreshold(config.threshold));
        }
        let n = model.n_classes();
        let extractor = MfccExtractor::new(model.mfcc_config.clone())?;
        Ok(Self {
            stream: WindowStream::new(config.hop_ms)?,
            extractor,
            ctx: InferenceContext::new(model, config.budget_bytes)?,
            interpreter: Interpreter::new(InterpreterConfig {
                threshold: config.threshold,
                timeout_ms: config.timeout_ms,
            }),
            probs: vec![0.0; n],
            last_accepted: vec![None; n],
            config,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn interpreter(&self) -> &Interpreter {
        &self.interpreter
    }

    /// Feeds PCM and returns the events of every window completed by it.
    pub fn push(&mut self, samples: &[i16]) -> Result<Vec<ServiceEvent>, PipelineError> {
        let mut events = Vec::new();
        let mut failure = None;
        let Self {
            config,
            stream,
            extractor,
            ctx,
            interpreter,
            probs,
            last_accepted,
        } = self;
        stream.push(samples, |window, ts| {
            if failure.is_some() {
                return;
            }
            let mut w = Window {
                config,
                extractor,
                ctx,
                interpreter,
                probs,
                last_accepted,
            };
            if let Err(e) = w.process(window, ts, &mut events) {
                failure = Some(e);
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(events),
        }
    }

    /// Back to SLEEP with an empty stream; returns the new state.
    pub fn reset(&mut self) -> ServiceEvent {
        self.stream.reset();
        self.interpreter.reset();
        self.last_accepted.iter_mut().for_each(|t| *t = None);
        state_event(&self.interpreter, 0)
    }
}

struct Window<'a> {
    config: &'a DetectorConfig,
    extractor: &'a MfccExtractor,
    ctx: &'a mut InferenceContext,
    interpreter: &'a mut Interpreter,
    probs: &'a mut [f64],
    last_accepted: &'a mut [Option<u64>],
}

impl Window<'_> {
    fn process(&mut self, window: &[i16], ts: u64, events: &mut Vec<ServiceEvent>) -> Result<(), PipelineError> {
        if self.interpreter.tick(ts) {
            events.push(state_event(self.interpreter, ts));
        }
        let features = self.extractor.extract(window)?;
        let top = self.ctx.forward_into(&features, self.probs)?;
        let confidence = self.probs[top];
        let label = &self.ctx.model().class_labels[top];
        let Some(keyword) = Keyword::parse(label).filter(|k| !k.is_non_command()) else {
            return Ok(());
        };
        if let Some(t) = self.last_accepted[top] {
            if ts.saturating_sub(t) < self.config.debounce_ms {
                return Ok(());
            }
        }
        let accepted = confidence >= self.config.threshold;
        events.push(ServiceEvent::Prediction {
            ts,
            label: keyword.label().to_string(),
            confidence,
            accepted,
        });
        if accepted {
            self.last_accepted[top] = Some(ts);
            let led_before = self.interpreter.led().clone();
            self.interpreter
                .handle(&CommandEvent::new(keyword.label(), confidence, ts))?;
            events.push(state_event(self.interpreter, ts));
            let led = self.interpreter.led();
            if *led != led_before {
                events.push(ServiceEvent::Led {
                    ts,
                    on: led.on,
                    rgb_set: led.rgb_set.iter().copied().collect(),
                    blink: led.blink,
                });
            }
        }
        Ok(())
    }
}

fn state_event(it: &Interpreter, ts: u64) -> ServiceEvent {
    let s = it.state();
    ServiceEvent::State {
        ts,
        mode: s.mode,
        color: s.color,
        color_set: s.color_set.iter().copied().collect(),
        flags: s.flags,
    }
}

/// Runs a whole recording through a fresh detector in `chunk`-sample pieces.
pub fn detect_all(
    model: Arc<QuantizedModel>,
    config: DetectorConfig,
    samples: &[i16],
    chunk: usize,
) -> Result<Vec<ServiceEvent>, PipelineError> {
    let mut d = Detector::new(model, config)?;
    let mut out = Vec::new();
    for part in samples.chunks(chunk.max(1)) {
        out.extend(d.push(part)?);
    }
    Ok(out)
}
