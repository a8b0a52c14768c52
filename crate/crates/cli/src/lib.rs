//! Command implementations behind the `kwspot` binary and the WebSocket
//! demo service. Each command is a plain function so tests can drive it
//! without spawning a process.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use kwspot_core::audio::{ingest_dataset, load_wav, SAMPLE_RATE_HZ};
use kwspot_core::eval::{load_split_features, metrics, split_dataset, Classifier, LabelledFeatures, Split};
use kwspot_core::model::{default_architecture, load_model_file, save_model_file, train, EpochLog, TrainConfig};
use kwspot_core::pipeline::{Detector, DetectorConfig, ServiceEvent};
use kwspot_core::quant::{
    calibrate, load_quantized_file, quantize_model, save_quantized, InferenceContext, QuantError,
};
use kwspot_core::synth::{default_classes, fixture_sequence, write_dataset};
use kwspot_core::{AudioClip, ConfusionMatrix, EvalReport, FloatModel, QuantizedModel, SplitManifest};

pub mod service;

pub const DEFAULT_PORT: u16 = 7878;

/// Streaming and service settings shared by `run` and `serve`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model_path: PathBuf,
    pub hop_ms: u32,
    pub threshold: f64,
    pub timeout_ms: u64,
    pub budget_bytes: usize,
    pub port: u16,
}

impl RunConfig {
    pub fn new(model_path: impl Into<PathBuf>) -> Self {
        let d = DetectorConfig::default();
        Self {
            model_path: model_path.into(),
            hop_ms: d.hop_ms,
            threshold: d.threshold,
            timeout_ms: d.timeout_ms,
            budget_bytes: d.budget_bytes,
            port: DEFAULT_PORT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.threshold),
            "threshold must be within [0, 1], got {}",
            self.threshold
        );
        ensure!(
            (50..=1000).contains(&self.hop_ms),
            "hop must be within [50, 1000] ms, got {}",
            self.hop_ms
        );
        Ok(())
    }

    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            hop_ms: self.hop_ms,
            threshold: self.threshold,
            timeout_ms: self.timeout_ms,
            budget_bytes: self.budget_bytes,
            ..DetectorConfig::default()
        }
    }

    pub fn load_model(&self) -> Result<Arc<QuantizedModel>> {
        self.validate()?;
        let model = load_quantized_file(&self.model_path)
            .with_context(|| format!("loading quantized model {}", self.model_path.display()))?;
        Ok(Arc::new(model))
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Parses `LABEL=RATIO` overrides.
pub fn parse_ratio_override(s: &str) -> Result<(String, f64)> {
    let (label, ratio) = s.rsplit_once('=').context("expected LABEL=RATIO")?;
    let ratio: f64 = ratio.trim().parse().with_context(|| format!("bad ratio in {s:?}"))?;
    ensure!((0.0..=1.0).contains(&ratio), "ratio {ratio} outside [0, 1]");
    Ok((label.trim().to_uppercase().replace('_', " "), ratio))
}

/// Scans a dataset tree and writes its train/test split manifest.
pub fn cmd_prepare(
    dataset_root: &Path,
    out: &Path,
    seed: u64,
    test_ratio: f64,
    overrides: &BTreeMap<String, f64>,
) -> Result<SplitManifest> {
    ensure!((0.0..=1.0).contains(&test_ratio), "ratio {test_ratio} outside [0, 1]");
    let manifest = ingest_dataset(dataset_root).with_context(|| format!("scanning {}", dataset_root.display()))?;
    let split = split_dataset(&manifest, test_ratio, seed, overrides)?;
    write_file(out, split.to_json())?;
    Ok(split)
}

pub fn load_manifest(path: &Path) -> Result<SplitManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    SplitManifest::from_json(&text).with_context(|| format!("parsing manifest {}", path.display()))
}

fn label_indices(labels: &[String], set: &[LabelledFeatures]) -> Result<Vec<usize>> {
    set.iter()
        .map(|s| {
            labels
                .iter()
                .position(|l| *l == s.label)
                .with_context(|| format!("unknown label {:?}", s.label))
        })
        .collect()
}

/// Trains the default network on the manifest's training split, writes the
/// float artifact, and writes one log line per epoch to `log`.
pub fn cmd_train(manifest: &Path, out: &Path, config: &TrainConfig, log: &mut dyn Write) -> Result<FloatModel> {
    let split = load_manifest(manifest)?;
    let labels: Vec<String> = split.labels.keys().cloned().collect();
    let model = default_architecture(&labels, config.seed)?;
    let train_set = load_split_features(&split, Split::Train, &model.mfcc_config)?;
    let targets = label_indices(&labels, &train_set)?;
    let inputs: Vec<_> = train_set.into_iter().map(|s| s.features).collect();
    let (model, epochs) = train(model, &inputs, &targets, config)?;
    for e in &epochs {
        writeln!(log, "{}", epoch_line(e))?;
    }
    save_model_file(&model, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(model)
}

fn epoch_line(e: &EpochLog) -> String {
    format!(
        "epoch {:>4}  loss {:.6}  accuracy {:.4}",
        e.epoch + 1,
        e.loss,
        e.accuracy
    )
}

/// Size report of a quantized export.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeReport {
    pub layers: Vec<(String, usize)>,
    pub weight_bytes: usize,
    pub artifact_bytes: usize,
    pub arena_bytes: usize,
    pub total_bytes: usize,
    pub budget_bytes: usize,
}

impl QuantizeReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, (name, bytes)) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "layer {i:>2} {name:<8} {bytes:>8} bytes");
        }
        let _ = writeln!(s, "weights  {:>8} bytes", self.weight_bytes);
        let _ = writeln!(s, "artifact {:>8} bytes", self.artifact_bytes);
        let _ = writeln!(s, "arena    {:>8} bytes", self.arena_bytes);
        let _ = writeln!(
            s,
            "total    {:>8} bytes (budget {})",
            self.total_bytes, self.budget_bytes
        );
        s
    }
}

/// Calibrates on the training split, quantizes, checks artifact plus arena
/// against the budget and writes the quantized artifact.
pub fn cmd_quantize(model_path: &Path, manifest: &Path, out: &Path, budget_bytes: usize) -> Result<QuantizeReport> {
    let model = load_model_file(model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let split = load_manifest(manifest)?;
    let rep: Vec<_> = load_split_features(&split, Split::Train, &model.mfcc_config)?
        .into_iter()
        .map(|s| s.features)
        .collect();
    let q = quantize_model(&model, &calibrate(&model, &rep)?)?;
    let bytes = save_quantized(&q);
    let plan = q.plan_arena(usize::MAX)?;
    let total = bytes.len() + plan.total_bytes;
    if total > budget_bytes {
        return Err(QuantError::BudgetExceeded {
            required: total,
            budget: budget_bytes,
        })
        .context(format!(
            "artifact ({} bytes) plus arena ({} bytes) exceed the memory budget; minimal feasible budget is {total} bytes",
            bytes.len(),
            plan.total_bytes
        ));
    }
    write_file(out, &bytes)?;
    Ok(QuantizeReport {
        layers: q.layer_bytes().into_iter().map(|(n, b)| (n.to_string(), b)).collect(),
        weight_bytes: q.weight_bytes(),
        artifact_bytes: bytes.len(),
        arena_bytes: plan.total_bytes,
        total_bytes: total,
        budget_bytes,
    })
}

/// A model loaded by `eval`: float or quantized, told apart by magic.
pub enum AnyModel {
    Float(FloatModel),
    Quantized(InferenceContext),
}

impl AnyModel {
    pub fn load(path: &Path, budget_bytes: usize) -> Result<Self> {
        let mut magic = [0u8; 4];
        std::fs::File::open(path)
            .and_then(|mut f| f.read_exact(&mut magic))
            .with_context(|| format!("reading {}", path.display()))?;
        match &magic {
            b"KWSF" => Ok(Self::Float(load_model_file(path)?)),
            b"KWSQ" => Ok(Self::Quantized(InferenceContext::new(
                Arc::new(load_quantized_file(path)?),
                budget_bytes,
            )?)),
            _ => bail!("{} is not a model artifact", path.display()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Float(_) => "float",
            Self::Quantized(_) => "quantized",
        }
    }

    fn classifier(&mut self) -> &mut dyn Classifier {
        match self {
            Self::Float(m) => m,
            Self::Quantized(c) => c,
        }
    }

    fn mfcc_config(&self) -> &kwspot_core::MfccConfig {
        match self {
            Self::Float(m) => &m.mfcc_config,
            Self::Quantized(c) => &c.model().mfcc_config,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub reports: Vec<(String, EvalReport)>,
    /// Share of test clips where the float and quantized argmax agree.
    pub agreement: Option<f64>,
}

/// Evaluates each model on the test split. Writes `<kind>_report.txt`,
/// `<kind>_report.csv` and `<kind>_confusion.csv` to `out_dir`, and
/// `agreement.txt` when a float and a quantized model are both given.
pub fn cmd_eval(manifest: &Path, models: &[PathBuf], out_dir: &Path, budget_bytes: usize) -> Result<EvalOutcome> {
    ensure!(!models.is_empty(), "no model given");
    let split = load_manifest(manifest)?;
    let mut loaded = models
        .iter()
        .map(|p| AnyModel::load(p, budget_bytes))
        .collect::<Result<Vec<_>>>()?;
    let test_set = load_split_features(&split, Split::Test, loaded[0].mfcc_config())?;
    let manifest_labels: Vec<String> = split.labels.keys().cloned().collect();

    let mut reports = Vec::new();
    let mut predictions = Vec::new();
    for model in &mut loaded {
        let kind = model.kind();
        let clf = model.classifier();
        if clf.labels() != manifest_labels.as_slice() {
            return Err(kwspot_core::eval::EvalError::LabelMismatch(format!(
                "{kind} model labels {:?} differ from manifest labels {:?}",
                clf.labels(),
                manifest_labels
            ))
            .into());
        }
        let truth = label_indices(&manifest_labels, &test_set)?;
        let preds = test_set
            .iter()
            .map(|s| clf.classify(&s.features))
            .collect::<Result<Vec<_>, _>>()?;
        let mut cm = ConfusionMatrix::new(manifest_labels.clone());
        for (&t, &p) in truth.iter().zip(&preds) {
            cm.add(t, p);
        }
        let report = metrics(&cm)?;
        write_file(&out_dir.join(format!("{kind}_report.txt")), report.to_text())?;
        write_file(&out_dir.join(format!("{kind}_report.csv")), report.to_csv())?;
        write_file(&out_dir.join(format!("{kind}_confusion.csv")), cm.to_csv())?;
        predictions.push((kind, preds));
        reports.push((kind.to_string(), report));
    }

    let float = predictions.iter().find(|(k, _)| *k == "float");
    let quant = predictions.iter().find(|(k, _)| *k == "quantized");
    let agreement = match (float, quant) {
        (Some((_, a)), Some((_, b))) => {
            let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
            let share = same as f64 / a.len().max(1) as f64;
            write_file(
                &out_dir.join("agreement.txt"),
                format!("argmax agreement {:.2}% ({same}/{})\n", share * 100.0, a.len()),
            )?;
            Some(share)
        }
        _ => None,
    };
    Ok(EvalOutcome { reports, agreement })
}

fn emit(out: &mut dyn Write, events: &[ServiceEvent]) -> Result<()> {
    for e in events {
        writeln!(out, "{}", e.to_json())?;
    }
    out.flush()?;
    Ok(())
}

/// Streams a recording through the detector, writing JSON lines.
pub fn run_samples(model: Arc<QuantizedModel>, config: &RunConfig, samples: &[i16], out: &mut dyn Write) -> Result<()> {
    let mut det = Detector::new(model, config.detector())?;
    for chunk in samples.chunks(SAMPLE_RATE_HZ as usize / 10) {
        emit(out, &det.push(chunk)?)?;
    }
    Ok(())
}

/// Streams raw little-endian PCM-16 from `input` until end of stream.
pub fn run_pcm_stream(
    model: Arc<QuantizedModel>,
    config: &RunConfig,
    input: &mut dyn Read,
    out: &mut dyn Write,
) -> Result<()> {
    let mut det = Detector::new(model, config.detector())?;
    let mut buf = vec![0u8; 3200];
    let mut carry: Option<u8> = None;
    let mut samples = Vec::with_capacity(buf.len() / 2 + 1);
    loop {
        let n = match input.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e).context("reading PCM input"),
        };
        let mut bytes = &buf[..n];
        samples.clear();
        if let Some(lo) = carry.take() {
            samples.push(i16::from_le_bytes([lo, bytes[0]]));
            bytes = &bytes[1..];
        }
        let pairs = bytes.chunks_exact(2);
        if let [b] = pairs.remainder() {
            carry = Some(*b);
        }
        samples.extend(pairs.map(|p| i16::from_le_bytes([p[0], p[1]])));
        emit(out, &det.push(&samples)?)?;
    }
    if carry.is_some() {
        bail!("bad audio format: PCM input ends with an odd byte");
    }
    Ok(())
}

/// `run` on a WAV file, or on standard-input PCM when `input` is `-`.
pub fn cmd_run(config: &RunConfig, input: &Path, out: &mut dyn Write) -> Result<()> {
    let model = config.load_model()?;
    if input.as_os_str() == "-" {
        let stdin = std::io::stdin();
        let mut lock = stdin.lock();
        return run_pcm_stream(model, config, &mut lock, out);
    }
    let clip = load_wav(input).with_context(|| format!("bad audio format in {}", input.display()))?;
    if clip.sample_rate_hz != SAMPLE_RATE_HZ {
        bail!(
            "bad audio format: {} is {} Hz, expected {} Hz",
            input.display(),
            clip.sample_rate_hz,
            SAMPLE_RATE_HZ
        );
    }
    run_samples(model, config, &clip.samples, out)
}

/// Writes the ten-class synthetic dataset used for desk-scale runs.
pub fn cmd_synth_dataset(root: &Path, clips_per_class: usize, seed: u64) -> Result<usize> {
    let m = write_dataset(root, &default_classes(), clips_per_class, seed)?;
    Ok(m.total())
}

/// Writes a WAV speaking `words` with the synthetic class sounds.
pub fn cmd_synth_fixture(out: &Path, words: &[&str], seed: u64) -> Result<usize> {
    let classes = default_classes();
    for w in words {
        ensure!(
            classes.iter().any(|c| c.label.eq_ignore_ascii_case(w)),
            "no synthetic sound for {w:?}"
        );
    }
    let samples = fixture_sequence(&classes, words, seed);
    let n = samples.len();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    kwspot_core::audio::write_wav(out, &AudioClip::new(samples, SAMPLE_RATE_HZ))?;
    Ok(n)
}
