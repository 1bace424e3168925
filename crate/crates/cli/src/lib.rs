//! Command-line pipeline: corpus, detector, hidden states, probe,
//! localization, evaluation and report, each stage reading the artifacts of
//! the previous ones from the output directory.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::info;

pub use artifacts::{HiddenManifest, Layout};
pub use config::{HiddenSource, RunConfig, CONFIG_KEYS};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "cohallo", version, about = "Line-level localization of hallucinated code")]
#[command(after_long_help = CONFIG_KEYS)]
pub struct Cli {
    /// TOML file with configuration keys.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Worker threads for per-sample stages.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    /// Output directory for every artifact.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Override a configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate (or load) the corpus and split it 8:1:1.
    GenCorpus,
    /// Train the detector.
    TrainDetector {
        /// Train only a classifier head over stored hidden states.
        #[arg(long)]
        head_only: bool,
    },
    /// Produce or validate per-terminal hidden states.
    ExtractHidden {
        #[arg(long, value_enum)]
        source: Option<HiddenSource>,
    },
    /// Train the structural probe on the training split.
    TrainProbe,
    /// Detect and localize hallucinations in the test split.
    Localize,
    /// Compute detection and localization metrics.
    Evaluate,
    /// Render the metrics as markdown.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus => "gen-corpus",
            Command::TrainDetector { .. } => "train-detector",
            Command::ExtractHidden { .. } => "extract-hidden",
            Command::TrainProbe => "train-probe",
            Command::Localize => "localize",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
        }
    }
}

impl Cli {
    /// Config file, then `--set` overrides, then the dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(seed) = self.seed {
            config.seed = Some(seed);
        }
        if let Some(jobs) = self.jobs {
            config.jobs = Some(jobs);
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        match &self.command {
            Command::TrainDetector { head_only: true } => config.head_only = true,
            Command::ExtractHidden { source: Some(s) } => config.hidden_source = *s,
            _ => {}
        }
        config.validate()?;
        Ok(config)
    }
}

/// Runs one command with a resolved config. Returns text meant for stdout.
pub fn execute(command: &Command, config: &RunConfig) -> Result<Option<String>> {
    info!("{} with config:\n{}", command.name(), config.to_toml());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = config.jobs {
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {:?} worker threads: {e}", config.jobs)))?;
    pool.install(|| match command {
        Command::GenCorpus => commands::gen_corpus(config).map(|_| None),
        Command::TrainDetector { .. } => commands::train_detector_cmd(config).map(|_| None),
        Command::ExtractHidden { .. } => commands::extract_hidden(config, config.hidden_source).map(|_| None),
        Command::TrainProbe => commands::train_probe_cmd(config).map(|_| None),
        Command::Localize => commands::localize_cmd(config).map(|_| None),
        Command::Evaluate => commands::evaluate(config).map(|_| None),
        Command::Report => commands::report(config).map(Some),
    })
}

pub fn run(cli: &Cli) -> Result<Option<String>> {
    let config = cli.resolve()?;
    execute(&cli.command, &config)
}
