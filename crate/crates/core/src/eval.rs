//! Train/test splitting, confusion matrices and per-label metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, normalize_length, AudioError, DatasetManifest};
use crate::features::{FeatureError, MfccConfig, MfccExtractor, MfccMatrix};
use crate::keyword::Keyword;
use crate::model::{argmax, FloatModel, ModelError};
use crate::quant::{InferenceContext, QuantError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("label {0:?} has no clips")]
    EmptyClass(String),
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("bad report CSV: {0}")]
    BadCsv(String),
    #[error("{path}: {source}")]
    Clip { path: PathBuf, source: AudioError },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub path: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub root: PathBuf,
    pub seed: u64,
    pub default_test_ratio: f64,
    #[serde(default)]
    pub ratio_overrides: BTreeMap<String, f64>,
    pub labels: BTreeMap<String, Vec<SplitEntry>>,
}

/// Round-half-up test count for `n` clips.
pub fn test_count(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio + 0.5 + 1e-9).floor() as usize).min(n)
}

/// Per-label shuffled split. Labels in `overrides` use their own test ratio.
pub fn split_dataset(
    manifest: &DatasetManifest,
    test_ratio: f64,
    seed: u64,
    overrides: &BTreeMap<String, f64>,
) -> Result<SplitManifest, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = BTreeMap::new();
    for (label, paths) in &manifest.labels {
        if paths.is_empty() {
            return Err(EvalError::EmptyClass(label.clone()));
        }
        let ratio = overrides.get(label).copied().unwrap_or(test_ratio);
        let mut order: Vec<&String> = paths.iter().collect();
        order.sort();
        order.shuffle(&mut rng);
        let n_test = test_count(order.len(), ratio);
        let mut entries: Vec<SplitEntry> = order
            .into_iter()
            .enumerate()
            .map(|(i, p)| SplitEntry {
                path: p.clone(),
                split: if i < n_test { Split::Test } else { Split::Train },
            })
            .collect();
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        labels.insert(label.clone(), entries);
    }
    Ok(SplitManifest {
        root: manifest.root.clone(),
        seed,
        default_test_ratio: test_ratio,
        ratio_overrides: overrides.clone(),
        labels,
    })
}

impl SplitManifest {
    /// (label, path) pairs in `split`, labels in order.
    pub fn clips(&self, split: Split) -> Vec<(String, String)> {
        self.labels
            .iter()
            .flat_map(|(l, es)| {
                es.iter()
                    .filter(move |e| e.split == split)
                    .map(move |e| (l.clone(), e.path.clone()))
            })
            .collect()
    }

    /// (train, test) counts per label.
    pub fn counts(&self) -> BTreeMap<String, (usize, usize)> {
        self.labels
            .iter()
            .map(|(l, es)| {
                let test = es.iter().filter(|e| e.split == Split::Test).count();
                (l.clone(), (es.len() - test, test))
            })
            .collect()
    }

    /// The manifest the split was drawn from.
    pub fn merge(&self) -> DatasetManifest {
        DatasetManifest {
            labels: self
                .labels
                .iter()
                .map(|(l, es)| (l.clone(), es.iter().map(|e| e.path.clone()).collect()))
                .collect(),
            sample_rate_hz: crate::audio::SAMPLE_RATE_HZ,
            root: self.root.clone(),
            failures: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// A labelled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledFeatures {
    pub label: String,
    pub features: MfccMatrix,
}

/// Loads, length-normalizes and featurizes every clip of `split`, spread
/// over the available cores. Output order follows [`SplitManifest::clips`].
pub fn load_split_features(
    split: &SplitManifest,
    which: Split,
    config: &MfccConfig,
) -> Result<Vec<LabelledFeatures>, EvalError> {
    let clips = split.clips(which);
    let extractor = MfccExtractor::new(config.clone())?;
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(clips.len().max(1));
    let chunk = clips.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<LabelledFeatures>, EvalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = clips
            .chunks(chunk)
            .map(|part| {
                let extractor = &extractor;
                let root = &split.root;
                s.spawn(move || {
                    part.iter()
                        .map(|(label, rel)| {
                            let path = root.join(rel);
                            let clip = load_wav(&path)
                                .and_then(normalize_length)
                                .map_err(|source| EvalError::Clip { path, source })?;
                            Ok(LabelledFeatures {
                                label: label.clone(),
                                features: extractor.extract(&clip.samples)?,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("feature worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(clips.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Anything that maps a feature matrix to a class index.
pub trait Classifier {
    fn labels(&self) -> &[String];
    fn classify(&mut self, features: &MfccMatrix) -> Result<usize, EvalError>;
}

impl Classifier for FloatModel {
    fn labels(&self) -> &[String] {
        &self.class_labels
    }

    fn classify(&mut self, features: &MfccMatrix) -> Result<usize, EvalError> {
        Ok(argmax(&self.logits(features)?))
    }
}

impl Classifier for InferenceContext {
    fn labels(&self) -> &[String] {
        &self.model().class_labels
    }

    fn classify(&mut self, features: &MfccMatrix) -> Result<usize, EvalError> {
        let mut logits = [0.0; 64];
        let n = self.model().n_classes();
        if n <= logits.len() {
            self.logits_into(features, &mut logits[..n])?;
            Ok(argmax(&logits[..n]))
        } else {
            let mut v = vec![0.0; n];
            self.logits_into(features, &mut v)?;
            Ok(argmax(&v))
        }
    }
}

/// Rows are true labels, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            labels,
            counts: vec![0; n * n],
        }
    }

    /// From a row-major grid.
    pub fn from_counts(labels: Vec<String>, counts: Vec<u64>) -> Result<Self, EvalError> {
        if counts.len() != labels.len() * labels.len() {
            return Err(EvalError::LabelMismatch(format!(
                "{} counts for {} labels",
                counts.len(),
                labels.len()
            )));
        }
        Ok(Self { labels, counts })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        let n = self.n();
        self.counts[truth * n + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n() + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n()).map(|i| self.get(i, i)).sum()
    }

    /// Adds another matrix over the same labels.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        if self.labels != other.labels {
            return Err(EvalError::LabelMismatch("matrices have different labels".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..self.n() {
                let _ = write!(out, ",{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs `classifier` over `samples` and tallies (true, argmax) pairs.
pub fn confusion<C: Classifier + ?Sized>(
    classifier: &mut C,
    samples: &[LabelledFeatures],
) -> Result<ConfusionMatrix, EvalError> {
    let labels = classifier.labels().to_vec();
    let mut cm = ConfusionMatrix::new(labels);
    for s in samples {
        let truth = cm
            .labels
            .iter()
            .position(|l| *l == s.label)
            .ok_or_else(|| EvalError::LabelMismatch(format!("model has no class {:?}", s.label)))?;
        let predicted = classifier.classify(&s.features)?;
        cm.add(truth, predicted);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<LabelMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<EvalReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let n = cm.n();
    let labels: Vec<LabelMetrics> = (0..n)
        .map(|i| {
            let tp = cm.get(i, i);
            let predicted: u64 = (0..n).map(|r| cm.get(r, i)).sum();
            let support: u64 = (0..n).map(|c| cm.get(i, c)).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            LabelMetrics {
                label: cm.labels[i].clone(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
            }
        })
        .collect();
    let mean = |f: fn(&LabelMetrics) -> f64| labels.iter().map(f).sum::<f64>() / n as f64;
    Ok(EvalReport {
        accuracy: ratio(cm.trace(), total),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        labels,
    })
}

/// Two decimals, halves rounded up.
pub fn round2(x: f64) -> f64 {
    ((x * 100.0) + 0.5 + 1e-9).floor() / 100.0
}

impl EvalReport {
    /// Rows ordered as the keyword vocabulary; other labels follow as given.
    pub fn ordered_rows(&self) -> Vec<&LabelMetrics> {
        let mut rows: Vec<(usize, usize, &LabelMetrics)> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let rank = Keyword::parse(&m.label)
                    .and_then(|k| Keyword::ALL.iter().position(|&x| x == k))
                    .unwrap_or(Keyword::ALL.len());
                (rank, i, m)
            })
            .collect();
        rows.sort_by_key(|&(rank, i, _)| (rank, i));
        rows.into_iter().map(|(_, _, m)| m).collect()
    }

    pub fn to_text(&self) -> String {
        let width = self.labels.iter().map(|m| m.label.len()).max().unwrap_or(0).max(8);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>9}  {:>6}\n",
            "Keyword", "F1-Score", "Precision", "Recall"
        );
        for m in self.ordered_rows() {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.2}  {:>9.2}  {:>6.2}",
                m.label,
                round2(m.f1),
                round2(m.precision),
                round2(m.recall)
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.2}  {:>9.2}  {:>6.2}",
            "MACRO",
            round2(self.macro_f1),
            round2(self.macro_precision),
            round2(self.macro_recall)
        );
        let _ = writeln!(out, "Accuracy: {:.2}", round2(self.accuracy));
        out
    }

    /// `label,f1,precision,recall` with a trailing MACRO row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,f1,precision,recall\n");
        let mut row = |label: &str, f1: f64, p: f64, r: f64| {
            let _ = writeln!(out, "{label},{:.2},{:.2},{:.2}", round2(f1), round2(p), round2(r));
        };
        for m in self.ordered_rows() {
            row(&m.label, m.f1, m.precision, m.recall);
        }
        row("MACRO", self.macro_f1, self.macro_precision, self.macro_recall);
        out
    }
}

/// One parsed report row: (label, f1, precision, recall).
pub type CsvRow = (String, f64, f64, f64);

pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>, EvalError> {
    let mut lines = text.lines();
    if lines.next() != Some("label,f1,precision,recall") {
        return Err(EvalError::BadCsv("missing header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.rsplitn(4, ',').collect();
            if cols.len() != 4 {
                return Err(EvalError::BadCsv(format!("row {line:?}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| EvalError::BadCsv(format!("{s:?}: {e}")));
            Ok((cols[3].to_string(), num(cols[2])?, num(cols[1])?, num(cols[0])?))
        })
        .collect()
}
