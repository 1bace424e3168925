use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use cohallo_core::encoder::{DetectorConfig, EncoderShape, DEFAULT_THRESHOLD};
use cohallo_core::localize::ScoringConfig;
use cohallo_core::metrics::EffortMode;
use cohallo_core::planted::PlantedConfig;
use cohallo_core::probe::{PairFeature, ProbeConfig};

use crate::error::{CliError, Result};

/// Where `extract-hidden` gets hidden states from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum HiddenSource {
    /// Run the trained built-in encoder.
    #[default]
    Builtin,
    /// Validate files written by an external extractor into `hidden_dir`.
    External,
    /// Construct hidden states with a known probe subspace.
    Planted,
}

/// Documentation of every configuration key, shown by `--help`.
pub const CONFIG_KEYS: &str = "\
Configuration keys (TOML file via --config, or --set KEY=VALUE):

  out                     output directory [out]
  corpus                  input corpus for gen-corpus; unset generates one
  corpus_size             generated corpus size [200]
  hidden_dir              hidden-state directory [<out>/hidden]
  hidden_source           builtin | external | planted [builtin]
  detector                detector file [<out>/detector.json]
  probe                   probe file [<out>/probe.bin]
  seed                    seed for corpus, split and training (required)
  jobs                    worker threads [all cores]

  width, heads, layers, ffn_width
                          encoder shape [32, 2, 2, 64]
  layer                   1-based layer fed to the probe [last]
  head_only               train only a head over stored hidden states [false]
  detector_epochs         [20]
  detector_lr             [0.0005]
  detector_batch_size     [8]
  dropout                 [0.1]
  weight_decay            [0.01]
  clip_norm               [1.0]
  threshold               detection threshold [0.5]

  probe_k                 probe rank [128]
  probe_epochs            [50]
  probe_lr                [0.02]
  probe_batch_size        [8]
  pair_feature            midpoint | difference [midpoint]

  planted_noise           off-subspace noise of planted states [0.0]
  planted_extra_width     width beyond the planted subspace [32]

  effort_mode             global | per_sample [global]
  condition_on_detection  drop undetected samples from localization metrics [false]
  control_flow            root labels weighted as control flow [built-in list]

Environment: COHALLO_LOG = error | warn | info | debug [info]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub corpus: Option<PathBuf>,
    pub corpus_size: usize,
    pub hidden_dir: Option<PathBuf>,
    pub hidden_source: HiddenSource,
    pub detector: Option<PathBuf>,
    pub probe: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,

    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_width: usize,
    pub layer: Option<usize>,
    pub head_only: bool,
    pub detector_epochs: usize,
    pub detector_lr: f64,
    pub detector_batch_size: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub threshold: f64,

    pub probe_k: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch_size: usize,
    pub pair_feature: PairFeature,

    pub planted_noise: f64,
    pub planted_extra_width: usize,

    pub effort_mode: EffortMode,
    pub condition_on_detection: bool,
    pub control_flow: Option<Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let shape = EncoderShape::default();
        let det = DetectorConfig::default();
        let probe = ProbeConfig::default();
        let planted = PlantedConfig::default();
        Self {
            out: PathBuf::from("out"),
            corpus: None,
            corpus_size: 200,
            hidden_dir: None,
            hidden_source: HiddenSource::default(),
            detector: None,
            probe: None,
            seed: None,
            jobs: None,
            width: shape.width,
            heads: shape.heads,
            layers: shape.layers,
            ffn_width: shape.ffn_width,
            layer: None,
            head_only: false,
            detector_epochs: det.epochs,
            detector_lr: det.lr,
            detector_batch_size: det.batch_size,
            dropout: det.dropout,
            weight_decay: det.weight_decay,
            clip_norm: det.clip_norm,
            threshold: DEFAULT_THRESHOLD,
            probe_k: probe.k,
            probe_epochs: probe.epochs,
            probe_lr: probe.lr,
            probe_batch_size: probe.batch_size,
            pair_feature: probe.pair_feature,
            planted_noise: planted.noise,
            planted_extra_width: planted.extra_width,
            effort_mode: EffortMode::default(),
            condition_on_detection: false,
            control_flow: None,
        }
    }
}

/// Parses one `KEY=VALUE` override. Values are read as TOML and fall back
/// to plain strings, so `--set out=runs/a` needs no quoting.
fn parse_override(item: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("override `{item}` has an empty key")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

impl RunConfig {
    /// Reads an optional TOML file and applies `overrides` on top.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text =
                    fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            let (key, value) = parse_override(item)?;
            table.insert(key, value);
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return fail(format!("width {} is not divisible by heads {}", self.width, self.heads));
        }
        if self.layers == 0 {
            return fail("layers must be positive".into());
        }
        if let Some(l) = self.layer {
            if l == 0 || l > self.layers {
                return fail(format!("layer {l} outside 1..={}", self.layers));
            }
        }
        if self.jobs == Some(0) {
            return fail("jobs must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return fail(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if self.planted_noise.is_nan() || self.planted_noise < 0.0 {
            return fail(format!("planted_noise {} must be non-negative", self.planted_noise));
        }
        if self.probe_k == 0 || self.probe_batch_size == 0 || self.detector_batch_size == 0 {
            return fail("probe_k and batch sizes must be positive".into());
        }
        if [self.probe_lr, self.detector_lr]
            .iter()
            .any(|lr| lr.is_nan() || *lr <= 0.0)
        {
            return fail("learning rates must be positive".into());
        }
        Ok(())
    }

    /// The seed, which every training and generation step needs.
    pub fn require_seed(&self, command: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| CliError::Config(format!("{command} needs a seed: pass --seed N or set `seed`")))
    }

    pub fn shape(&self) -> EncoderShape {
        EncoderShape {
            width: self.width,
            heads: self.heads,
            layers: self.layers,
            ffn_width: self.ffn_width,
        }
    }

    pub fn detector_config(&self, seed: u64) -> DetectorConfig {
        DetectorConfig {
            shape: self.shape(),
            epochs: self.detector_epochs,
            lr: self.detector_lr,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            batch_size: self.detector_batch_size,
            dropout: self.dropout,
            threshold: self.threshold,
            seed,
        }
    }

    pub fn probe_config(&self, seed: u64) -> ProbeConfig {
        ProbeConfig {
            k: self.probe_k,
            epochs: self.probe_epochs,
            lr: self.probe_lr,
            batch_size: self.probe_batch_size,
            pair_feature: self.pair_feature,
            seed,
            ..ProbeConfig::default()
        }
    }

    pub fn planted_config(&self) -> PlantedConfig {
        PlantedConfig {
            noise: self.planted_noise,
            extra_width: self.planted_extra_width,
            pair_feature: self.pair_feature,
            ..PlantedConfig::default()
        }
    }

    pub fn scoring_config(&self) -> ScoringConfig {
        let mut scoring = ScoringConfig::default();
        if let Some(labels) = &self.control_flow {
            scoring.control_flow = labels.iter().cloned().collect();
        }
        scoring
    }

    /// The config as TOML, for the log.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("<unprintable: {e}>"))
    }
}
