#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::OnceLock;

use kwspot::{cmd_prepare, cmd_quantize, cmd_synth_dataset, cmd_synth_fixture, cmd_train};
use kwspot_core::model::TrainConfig;

pub struct Trained {
    _dir: tempfile::TempDir,
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub float: PathBuf,
    pub quantized: PathBuf,
    pub fixture: PathBuf,
}

/// Synthetic dataset, trained and quantized once per test binary.
pub fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        cmd_synth_dataset(&root.join("data"), 24, 3).unwrap();
        let manifest = root.join("manifest.json");
        cmd_prepare(&root.join("data"), &manifest, 3, 0.25, &BTreeMap::new()).unwrap();
        let float = root.join("model.kwsf");
        let config = TrainConfig {
            epochs: 60,
            seed: 3,
            ..TrainConfig::default()
        };
        cmd_train(&manifest, &float, &config, &mut std::io::sink()).unwrap();
        let quantized = root.join("model.kwsq");
        cmd_quantize(&float, &manifest, &quantized, 196_608).unwrap();
        let fixture = root.join("fixture.wav");
        cmd_synth_fixture(&fixture, &["wake up", "blue", "on", "led"], 11).unwrap();
        Trained {
            _dir: dir,
            root,
            manifest,
            float,
            quantized,
            fixture,
        }
    })
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_kwspot")
}
