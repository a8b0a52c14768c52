use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AudioError, SAMPLE_RATE_HZ};
use crate::keyword::canonical_label;

/// Clips grouped by label, paths relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub labels: BTreeMap<String, Vec<String>>,
    pub sample_rate_hz: u32,
    #[serde(skip)]
    pub root: PathBuf,
    /// Files that could not be read, with the reason.
    #[serde(skip)]
    pub failures: Vec<(PathBuf, String)>,
}

impl DatasetManifest {
    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.labels.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    pub fn total(&self) -> usize {
        self.labels.values().map(Vec::len).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self, serde_json::Error> {
        let mut m: Self = serde_json::from_str(text)?;
        m.root = root.into();
        Ok(m)
    }
}

fn is_wav(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn check_header(path: &Path) -> Result<(), String> {
    let reader = hound::WavReader::open(path).map_err(|e| e.to_string())?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(format!(
            "unsupported encoding {:?}/{}",
            spec.sample_format, spec.bits_per_sample
        ));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(format!("sample rate {} Hz", spec.sample_rate));
    }
    Ok(())
}

/// Scans `root/<label>/*.wav`. Unreadable files are collected in
/// `failures` and skipped; labels without any readable clip are omitted.
pub fn ingest_dataset(root: impl AsRef<Path>) -> Result<DatasetManifest, AudioError> {
    let root = root.as_ref();
    let mut labels: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut failures = Vec::new();

    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    for dir in dirs {
        let Some(name) = dir.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let label = canonical_label(name);
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_wav(p))
            .collect();
        files.sort();
        for file in files {
            match check_header(&file) {
                Ok(()) => {
                    let rel = file
                        .strip_prefix(root)
                        .expect("file lies under root")
                        .to_string_lossy()
                        .replace('\\', "/");
                    labels.entry(label.clone()).or_default().push(rel);
                }
                Err(reason) => failures.push((file, reason)),
            }
        }
    }

    if labels.is_empty() {
        return Err(AudioError::EmptyDataset(root.to_path_buf()));
    }
    Ok(DatasetManifest {
        labels,
        sample_rate_hz: SAMPLE_RATE_HZ,
        root: root.to_path_buf(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, AudioClip};

    fn touch_wav(path: &Path) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        write_wav(path, &AudioClip::new(vec![0; 4], 16_000)).unwrap();
    }

    #[test]
    fn counts_per_label() {
        let dir = tempfile::tempdir().unwrap();
        touch_wav(&dir.path().join("blue/a.wav"));
        touch_wav(&dir.path().join("blue/b.wav"));
        touch_wav(&dir.path().join("red/a.wav"));
        let m = ingest_dataset(dir.path()).unwrap();
        let counts: Vec<_> = m.counts().into_iter().collect();
        assert_eq!(counts, vec![("BLUE".to_string(), 2), ("RED".to_string(), 1)]);
        assert_eq!(m.labels["BLUE"], vec!["blue/a.wav", "blue/b.wav"]);
    }

    #[test]
    fn empty_root_is_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ingest_dataset(dir.path()), Err(AudioError::EmptyDataset(_))));
    }

    #[test]
    fn unreadable_file_is_reported_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        touch_wav(&dir.path().join("on/good.wav"));
        std::fs::write(dir.path().join("on/bad.wav"), b"not a wav").unwrap();
        let m = ingest_dataset(dir.path()).unwrap();
        assert_eq!(m.total(), 1);
        assert_eq!(m.failures.len(), 1);
        assert!(m.failures[0].0.ends_with("bad.wav"));
    }

    #[test]
    fn json_shape() {
        let dir = tempfile::tempdir().unwrap();
        touch_wav(&dir.path().join("wake_up/x.wav"));
        let m = ingest_dataset(dir.path()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["sample_rate_hz"], 16_000);
        assert_eq!(v["labels"]["WAKE UP"][0], "wake_up/x.wav");
        assert_eq!(v.as_object().unwrap().len(), 2);
        let back = DatasetManifest::from_json(&m.to_json(), dir.path()).unwrap();
        assert_eq!(back.labels, m.labels);
    }
}
