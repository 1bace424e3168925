use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use cohallo_core::corpus::{generate_synthetic, load_corpus, split_corpus, write_corpus, Sample};
use cohallo_core::encoder::{
    encode, mean_pool, train_detector, train_head, write_hidden, Detector, EpochRecord, BUILTIN_MODEL,
};
use cohallo_core::io::Fixed6;
use cohallo_core::localize::localize;
use cohallo_core::metrics::EvalCase;
use cohallo_core::planted::{gold_tuple, plant_corpus, PLANTED_MODEL};
use cohallo_core::probe::{load_probe, save_probe, train_probe, ProbeDataset, ProbeEpoch};
use cohallo_core::syntax::parse_source;
use cohallo_core::{ConfusionCounts, DetectionResult, Error, HiddenMatrix, Label, LocalizationReport, MetricsReport};

use crate::artifacts::{
    hidden_file_name, load_split, read_json, read_jsonl, require, write_json, write_jsonl, DetectionRecord,
    HiddenManifest, Layout,
};
use crate::config::{HiddenSource, RunConfig};
use crate::error::{CliError, Result};

#[derive(Serialize, Deserialize)]
struct DetectorHistory {
    kind: String,
    best_epoch: usize,
    history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct ProbeHistory {
    best_epoch: usize,
    history: Vec<ProbeEpoch>,
}

/// Writes the corpus (loaded from `corpus` or generated) and its split.
pub fn gen_corpus(config: &RunConfig) -> Result<()> {
    let seed = config.require_seed("gen-corpus")?;
    let layout = Layout::new(config);
    let samples = match &config.corpus {
        Some(path) => load_corpus(path).map_err(|source| CliError::Artifact {
            path: path.clone(),
            source,
        })?,
        None => generate_synthetic(seed, config.corpus_size)?,
    };
    let split = split_corpus(&samples, seed)?;
    write_corpus(&samples, &layout.corpus)?;
    write_json(&layout.split, &split.ids())?;
    let hallucinated = samples.iter().filter(|s| s.label.is_hallucinated()).count();
    info!(
        "corpus: {} samples ({hallucinated} hallucinated), split {}/{}/{}",
        samples.len(),
        split.train.len(),
        split.valid.len(),
        split.test.len()
    );
    Ok(())
}

fn hidden_rows(manifest: &HiddenManifest, samples: &[Sample]) -> Result<Vec<(Sample, HiddenMatrix)>> {
    let rows: Vec<Option<(Sample, HiddenMatrix)>> = samples
        .par_iter()
        .map(|s| {
            let ast = parse_source(&s.code, &s.lang)?;
            Ok(manifest.read(&s.id, &ast.terminals())?.map(|h| (s.clone(), h)))
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Trains the built-in detector, or with `head_only` a head over the stored
/// hidden states.
pub fn train_detector_cmd(config: &RunConfig) -> Result<()> {
    let seed = config.require_seed("train-detector")?;
    let layout = Layout::new(config);
    let (_, split) = load_split(&layout)?;
    let det_config = config.detector_config(seed);
    let (detector, best_epoch, history) = if config.head_only {
        let manifest = HiddenManifest::load(&layout)?;
        let labeled = |set: &[Sample]| -> Result<Vec<(HiddenMatrix, Label)>> {
            Ok(hidden_rows(&manifest, set)?
                .into_iter()
                .map(|(s, h)| (h, s.label))
                .collect())
        };
        let trained = train_head(&labeled(&split.train)?, &labeled(&split.valid)?, &det_config)?;
        (Detector::HeadOnly(trained.model), trained.best_epoch, trained.history)
    } else {
        let trained = train_detector(&split, &det_config)?;
        (Detector::Encoder(trained.model), trained.best_epoch, trained.history)
    };
    let kind = match detector {
        Detector::Encoder(_) => "encoder",
        Detector::HeadOnly(_) => "head_only",
    };
    if let Some(best) = history.iter().find(|h| h.epoch == best_epoch) {
        info!(
            "detector ({kind}): best epoch {best_epoch}, validation F1 {:.4}",
            best.valid_f1
        );
    }
    write_json(&layout.detector, &detector)?;
    write_json(
        &layout.detector_history,
        &DetectorHistory {
            kind: kind.into(),
            best_epoch,
            history,
        },
    )
}

/// Produces or validates one hidden-state file per sample and records them in
/// the manifest.
pub fn extract_hidden(config: &RunConfig, source: HiddenSource) -> Result<()> {
    let layout = Layout::new(config);
    let (samples, split) = load_split(&layout)?;
    let dir = layout.hidden_dir.clone();
    let mut files = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    let (model, layer, width) = match source {
        HiddenSource::Builtin => {
            require(&layout.detector, "detector", "train-detector")?;
            let Detector::Encoder(model) = read_json::<Detector>(&layout.detector)? else {
                return Err(CliError::Config(
                    "the stored detector is head-only; builtin extraction needs the encoder".into(),
                ));
            };
            let layer = config.layer.unwrap_or(model.encoder.layer_count());
            let results: Vec<(String, std::result::Result<String, String>)> = samples
                .par_iter()
                .map(|s| {
                    let name = hidden_file_name(&s.id);
                    match encode(s, &model.encoder, layer) {
                        Ok(h) => {
                            write_hidden(&h, &dir.join(&name))?;
                            Ok((s.id.clone(), Ok(name)))
                        }
                        Err(Error::Alignment(reason)) => Ok((s.id.clone(), Err(reason))),
                        Err(e) => Err(e.into()),
                    }
                })
                .collect::<Result<_>>()?;
            for (id, r) in results {
                match r {
                    Ok(name) => files.insert(id, name),
                    Err(reason) => skipped.insert(id, reason),
                };
            }
            (BUILTIN_MODEL.to_string(), layer, model.encoder.width())
        }
        HiddenSource::External => {
            if config.hidden_dir.is_none() {
                return Err(CliError::Config(
                    "external hidden states need `hidden_dir` set to the extractor output".into(),
                ));
            }
            let mut failures = Vec::new();
            let mut seen: BTreeSet<(String, usize, usize)> = BTreeSet::new();
            let checked: Vec<(String, String, std::result::Result<HiddenMatrix, String>)> = samples
                .par_iter()
                .map(|s| {
                    let name = hidden_file_name(&s.id);
                    let path = dir.join(&name);
                    if !path.is_file() {
                        return (s.id.clone(), name, Err(String::new()));
                    }
                    let r = parse_source(&s.code, &s.lang)
                        .and_then(|ast| cohallo_core::encoder::read_hidden_aligned(&path, &ast.terminals()))
                        .map_err(|e| e.to_string());
                    (s.id.clone(), name, r)
                })
                .collect();
            for (id, name, r) in checked {
                match r {
                    Ok(h) => {
                        seen.insert((h.model.clone(), h.layer, h.width()));
                        files.insert(id, name);
                    }
                    Err(reason) if reason.is_empty() => {
                        skipped.insert(id, "no hidden-state file".into());
                    }
                    Err(reason) => failures.push(format!("{name}: {reason}")),
                }
            }
            if !failures.is_empty() {
                return Err(CliError::Core(Error::Alignment(format!(
                    "{} invalid hidden-state files in {}:\n  {}",
                    failures.len(),
                    dir.display(),
                    failures.join("\n  ")
                ))));
            }
            if seen.len() > 1 {
                return Err(CliError::Core(Error::Shape(format!(
                    "hidden-state files disagree on model, layer or width: {seen:?}"
                ))));
            }
            let Some((model, layer, width)) = seen.into_iter().next() else {
                return Err(CliError::Core(Error::InvalidArgument(format!(
                    "no hidden-state files for this corpus in {}",
                    dir.display()
                ))));
            };
            (model, layer, width)
        }
        HiddenSource::Planted => {
            let seed = config.require_seed("extract-hidden")?;
            // only held-out hallucinated samples hide structure off their gold lines
            let restrict = split.test.iter().map(|s| s.id.clone()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (space, items) = plant_corpus(&samples, &restrict, config.planted_config(), &mut rng)?;
            items.par_iter().try_for_each(|item| {
                write_hidden(&item.hidden, &dir.join(hidden_file_name(&item.sample_id))).map_err(CliError::from)
            })?;
            for item in &items {
                files.insert(item.sample_id.clone(), hidden_file_name(&item.sample_id));
            }
            (PLANTED_MODEL.to_string(), 1, space.width())
        }
    };
    for (id, reason) in &skipped {
        warn!("no hidden states for `{id}`: {reason}");
    }
    info!(
        "hidden states ({source:?}): {} files of width {width} in {}, {} skipped",
        files.len(),
        dir.display(),
        skipped.len()
    );
    write_json(
        &layout.manifest,
        &HiddenManifest {
            source,
            dir,
            model,
            layer,
            width,
            files,
            skipped,
        },
    )
}

/// Fits the probe on the train split's hidden states against gold tuples.
pub fn train_probe_cmd(config: &RunConfig) -> Result<()> {
    let seed = config.require_seed("train-probe")?;
    let layout = Layout::new(config);
    let (_, split) = load_split(&layout)?;
    let manifest = HiddenManifest::load(&layout)?;
    let dataset = |set: &[Sample]| -> Result<ProbeDataset> {
        let items = hidden_rows(&manifest, set)?
            .into_par_iter()
            .map(|(s, h)| Ok((h, gold_tuple(&s)?.1)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProbeDataset::new(items)?)
    };
    let (train, valid) = (dataset(&split.train)?, dataset(&split.valid)?);
    let trained = train_probe(&train, &valid, &config.probe_config(seed))?;
    if let Some(best) = trained.history.iter().find(|h| h.epoch == trained.best_epoch) {
        info!(
            "probe: best epoch {}, validation exact match {:.4}",
            trained.best_epoch, best.valid_exact_match
        );
    }
    save_probe(&trained.params, &layout.probe)?;
    write_json(
        &layout.probe_history,
        &ProbeHistory {
            best_epoch: trained.best_epoch,
            history: trained.history,
        },
    )
}

/// Runs detection on the test split and localizes every sample flagged as
/// hallucinated.
pub fn localize_cmd(config: &RunConfig) -> Result<()> {
    let layout = Layout::new(config);
    require(&layout.probe, "probe", "train-probe")?;
    require(&layout.detector, "detector", "train-detector")?;
    let probe = load_probe(&layout.probe).map_err(|source| CliError::Artifact {
        path: layout.probe.clone(),
        source,
    })?;
    let detector: Detector = read_json(&layout.detector)?;
    let manifest = HiddenManifest::load(&layout)?;
    let (_, split) = load_split(&layout)?;
    let scoring = config.scoring_config();
    let outcomes: Vec<Option<(DetectionRecord, Option<LocalizationReport>)>> = split
        .test
        .par_iter()
        .map(|s| {
            let ast = parse_source(&s.code, &s.lang)?;
            let terminals = ast.terminals();
            let Some(hidden) = manifest.read(&s.id, &terminals)? else {
                return Ok(None);
            };
            let probability = match &detector {
                Detector::Encoder(m) => m.probability(&m.token_ids(&s.code, &terminals))?,
                Detector::HeadOnly(h) => h.probabilities(&mean_pool(&hidden.rows))?[1],
            };
            let label = if probability >= config.threshold {
                Label::Hallucinated
            } else {
                Label::Clean
            };
            let record = DetectionRecord {
                sample_id: s.id.clone(),
                gold_label: s.label,
                predicted_label: label,
                probability: Fixed6(probability),
            };
            let report = if label.is_hallucinated() {
                let detection = DetectionResult {
                    sample_id: s.id.clone(),
                    label,
                    probability,
                    hidden,
                };
                Some(localize(&s.code, &ast, &detection, &probe, &scoring)?)
            } else {
                None
            };
            Ok(Some((record, report)))
        })
        .collect::<Result<_>>()?;
    let mut detections = Vec::new();
    let mut reports = Vec::new();
    for (record, report) in outcomes.into_iter().flatten() {
        detections.push(record);
        reports.extend(report);
    }
    detections.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    reports.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    info!(
        "localize: {} test samples detected, {} flagged and localized",
        detections.len(),
        reports.len()
    );
    write_jsonl(&layout.detections, &detections)?;
    write_jsonl(&layout.localization, &reports)
}

/// Scores detections and localization reports against the gold test split.
pub fn evaluate(config: &RunConfig) -> Result<()> {
    let layout = Layout::new(config);
    require(&layout.detections, "detections", "localize")?;
    require(&layout.localization, "localization reports", "localize")?;
    let (_, split) = load_split(&layout)?;
    let detections: Vec<DetectionRecord> = read_jsonl(&layout.detections)?;
    let reports: Vec<LocalizationReport> = read_jsonl(&layout.localization)?;
    let counts = ConfusionCounts::from_pairs(detections.iter().map(|d| (d.gold_label, d.predicted_label)));
    let mut by_id: BTreeMap<String, LocalizationReport> =
        reports.into_iter().map(|r| (r.sample_id.clone(), r)).collect();
    let mut cases: Vec<EvalCase> = split
        .test
        .iter()
        .filter(|s| s.label.is_hallucinated())
        .map(|s| EvalCase {
            sample_id: s.id.clone(),
            gold_lines: s.hallucinated_lines.clone(),
            total_lines: s.line_count(),
            ranking: by_id.remove(&s.id).map(|r| r.ranking),
        })
        .collect();
    cases.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let report = MetricsReport::compute(counts, &cases, config.effort_mode, config.condition_on_detection)?;
    info!(
        "evaluate: F1 {:.6}, Top-1 {:.6}, mean IFA {:.6} over {} samples ({} without a report)",
        report.f1.0, report.top_1.0, report.mean_ifa.0, report.evaluated, report.skipped
    );
    write_json(&layout.metrics, &report)
}

/// Markdown summary of the metrics.
pub fn render_report(m: &MetricsReport) -> String {
    let mut s = String::from("# Localization report\n\n");
    let c = &m.counts;
    let _ = writeln!(
        s,
        "Detection on the test split: TP {} FP {} FN {} TN {}\n",
        c.tp, c.fp, c.fn_, c.tn
    );
    s.push_str("| metric | value |\n|---|---|\n");
    let rows = [
        ("precision", m.precision),
        ("recall", m.recall),
        ("F1", m.f1),
        ("Top-1", m.top_1),
        ("Top-3", m.top_3),
        ("Top-5", m.top_5),
        ("Top-10", m.top_10),
        ("IFA (mean)", m.mean_ifa),
        ("Recall@1%Effort", m.recall_at_1pct_effort),
        ("Effort@20%Recall", m.effort_at_20pct_recall),
    ];
    for (name, v) in rows {
        let _ = writeln!(s, "| {name} | {:.6} |", v.0);
    }
    let population = if m.conditioned_on_detection {
        "detected samples only"
    } else {
        "all hallucinated samples, undetected ones scored as misses"
    };
    let _ = writeln!(
        s,
        "\n{} hallucinated test samples, {} without a localization report ({population}); effort mode {:?}.",
        m.evaluated, m.skipped, m.effort_mode
    );
    s
}

pub fn report(config: &RunConfig) -> Result<String> {
    let layout = Layout::new(config);
    require(&layout.metrics, "metrics", "evaluate")?;
    let metrics: MetricsReport = read_json(&layout.metrics)?;
    let text = render_report(&metrics);
    cohallo_core::io::atomic_write(&layout.report, text.as_bytes())?;
    Ok(text)
}
