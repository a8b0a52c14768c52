//! Small end-to-end runs of synthesis, features, training and quantization.

use std::collections::BTreeMap;
use std::sync::Arc;

use kwspot_core::eval::{confusion, load_split_features, metrics, split_dataset, Split};
use kwspot_core::model::{default_architecture, train, TrainConfig};
use kwspot_core::quant::{calibrate, quantize_model, InferenceContext};
use kwspot_core::synth::{default_classes, write_dataset};
use kwspot_core::MfccConfig;

#[test]
fn two_class_toy_trains() {
    let dir = tempfile::tempdir().unwrap();
    let classes: Vec<_> = default_classes()
        .into_iter()
        .filter(|c| c.label == "BLUE" || c.label == "OFF")
        .collect();
    let manifest = write_dataset(dir.path(), &classes, 20, 5).unwrap();
    let split = split_dataset(&manifest, 0.2, 5, &BTreeMap::new()).unwrap();
    let cfg = MfccConfig::default();
    let train_set = load_split_features(&split, Split::Train, &cfg).unwrap();
    let labels: Vec<String> = manifest.labels.keys().cloned().collect();
    let inputs: Vec<_> = train_set.iter().map(|s| s.features.clone()).collect();
    let targets: Vec<usize> = train_set
        .iter()
        .map(|s| labels.iter().position(|l| *l == s.label).unwrap())
        .collect();
    let model = default_architecture(&labels, 1).unwrap();
    let tc = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let (mut model, log) = train(model, &inputs, &targets, &tc).unwrap();
    assert_eq!(log.len(), 30);
    let cm = confusion(&mut model, &train_set).unwrap();
    let acc = metrics(&cm).unwrap().accuracy;
    assert!(acc >= 0.95, "train accuracy {acc}");

    let test_set = load_split_features(&split, Split::Test, &cfg).unwrap();
    let q = quantize_model(&model, &calibrate(&model, &inputs).unwrap()).unwrap();
    let mut ctx = InferenceContext::new(Arc::new(q), 196_608).unwrap();
    let qcm = confusion(&mut ctx, &test_set).unwrap();
    assert!(metrics(&qcm).unwrap().accuracy >= 0.9);
}

#[test]
fn shuffled_labels_do_not_generalize() {
    let dir = tempfile::tempdir().unwrap();
    let classes: Vec<_> = default_classes().into_iter().take(4).collect();
    let manifest = write_dataset(dir.path(), &classes, 20, 8).unwrap();
    let split = split_dataset(&manifest, 0.25, 8, &BTreeMap::new()).unwrap();
    let cfg = MfccConfig::default();
    let train_set = load_split_features(&split, Split::Train, &cfg).unwrap();
    let test_set = load_split_features(&split, Split::Test, &cfg).unwrap();
    let labels: Vec<String> = manifest.labels.keys().cloned().collect();
    let inputs: Vec<_> = train_set.iter().map(|s| s.features.clone()).collect();
    // labels assigned round-robin regardless of the audio
    let targets: Vec<usize> = (0..inputs.len()).map(|i| i % labels.len()).collect();
    let tc = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let (mut model, _) = train(default_architecture(&labels, 2).unwrap(), &inputs, &targets, &tc).unwrap();
    let acc = metrics(&confusion(&mut model, &test_set).unwrap()).unwrap().accuracy;
    assert!(acc < 0.6, "test accuracy {acc} with shuffled labels");
}
