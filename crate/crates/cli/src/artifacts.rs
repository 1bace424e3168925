//! Artifact paths under the output directory and their readers and writers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cohallo_core::corpus::{load_corpus, CorpusSplit, Sample, SplitIds};
use cohallo_core::encoder::read_hidden_aligned;
use cohallo_core::io::{atomic_write, Fixed6};
use cohallo_core::{HiddenMatrix, Label, Terminal};

use crate::config::{HiddenSource, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub out: PathBuf,
    pub corpus: PathBuf,
    pub split: PathBuf,
    pub hidden_dir: PathBuf,
    pub manifest: PathBuf,
    pub detector: PathBuf,
    pub detector_history: PathBuf,
    pub probe: PathBuf,
    pub probe_history: PathBuf,
    pub detections: PathBuf,
    pub localization: PathBuf,
    pub metrics: PathBuf,
    pub report: PathBuf,
}

impl Layout {
    pub fn new(config: &RunConfig) -> Self {
        let out = config.out.clone();
        let at = |name: &str| out.join(name);
        Self {
            corpus: at("corpus.jsonl"),
            split: at("split.json"),
            hidden_dir: config.hidden_dir.clone().unwrap_or_else(|| at("hidden")),
            manifest: at("hidden_manifest.json"),
            detector: config.detector.clone().unwrap_or_else(|| at("detector.json")),
            detector_history: at("detector_history.json"),
            probe: config.probe.clone().unwrap_or_else(|| at("probe.bin")),
            probe_history: at("probe_history.json"),
            detections: at("detections.jsonl"),
            localization: at("localization.jsonl"),
            metrics: at("metrics.json"),
            report: at("report.md"),
            out,
        }
    }
}

/// Fails with the name of the command that produces `path` when it is absent.
pub fn require(path: &Path, what: &'static str, command: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            what,
            path: path.to_path_buf(),
            command,
        })
    }
}

fn at_path<T>(path: &Path, r: cohallo_core::Result<T>) -> Result<T> {
    r.map_err(|source| CliError::Artifact {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(atomic_write(path, text.as_bytes())?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    at_path(path, serde_json::from_str(&text).map_err(Into::into))
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    Ok(atomic_write(path, text.as_bytes())?)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| at_path(path, serde_json::from_str(l).map_err(Into::into)))
        .collect()
}

/// The corpus and its stored split.
pub fn load_split(layout: &Layout) -> Result<(Vec<Sample>, CorpusSplit)> {
    require(&layout.corpus, "corpus", "gen-corpus")?;
    require(&layout.split, "split", "gen-corpus")?;
    let samples = at_path(&layout.corpus, load_corpus(&layout.corpus))?;
    let ids: SplitIds = read_json(&layout.split)?;
    let split = at_path(&layout.split, CorpusSplit::from_ids(&samples, &ids))?;
    Ok((samples, split))
}

/// File name for a sample's hidden states. Bytes outside `[A-Za-z0-9_-]`
/// are percent-encoded so any id maps to a distinct, portable name.
pub fn hidden_file_name(sample_id: &str) -> String {
    let mut name = String::with_capacity(sample_id.len() + 4);
    for b in sample_id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' {
            name.push(b as char);
        } else {
            let _ = write!(name, "%{b:02X}");
        }
    }
    name.push_str(".chl");
    name
}

/// Record of which hidden-state files exist for which samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenManifest {
    pub source: HiddenSource,
    pub dir: PathBuf,
    pub model: String,
    pub layer: usize,
    pub width: usize,
    /// Sample id to file name inside `dir`.
    pub files: BTreeMap<String, String>,
    /// Sample id to the reason it has no file.
    pub skipped: BTreeMap<String, String>,
}

impl HiddenManifest {
    pub fn load(layout: &Layout) -> Result<Self> {
        require(&layout.manifest, "hidden-state manifest", "extract-hidden")?;
        read_json(&layout.manifest)
    }

    /// The sample's hidden rows, checked against its terminals; `None` when
    /// extraction skipped the sample.
    pub fn read(&self, sample_id: &str, terminals: &[Terminal]) -> Result<Option<HiddenMatrix>> {
        let Some(name) = self.files.get(sample_id) else {
            return Ok(None);
        };
        let path = self.dir.join(name);
        let h = at_path(&path, read_hidden_aligned(&path, terminals))?;
        if h.sample_id != sample_id {
            return Err(CliError::Artifact {
                path,
                source: cohallo_core::Error::Alignment(format!(
                    "file holds `{}` but the manifest maps it to `{sample_id}`",
                    h.sample_id
                )),
            });
        }
        Ok(Some(h))
    }
}

/// Detector output for one test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub sample_id: String,
    pub gold_label: Label,
    pub predicted_label: Label,
    pub probability: Fixed6,
}
