use std::fs;
use std::path::Path;
use std::process::Command as Process;

use clap::Parser;

use cohallo_cli::{run, Cli, CliError, HiddenManifest, Layout, RunConfig};
use cohallo_core::MetricsReport;

fn cli(out: &Path, args: &[&str]) -> Result<Option<String>, CliError> {
    let mut argv = vec!["cohallo".to_string(), "--out".into(), out.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(&Cli::try_parse_from(argv).unwrap())
}

fn builtin_pipeline(out: &Path) {
    for stage in [
        "gen-corpus",
        "train-detector",
        "extract-hidden",
        "train-probe",
        "localize",
        "evaluate",
    ] {
        cli(
            out,
            &[
                stage,
                "--seed",
                "5",
                "--set",
                "corpus_size=20",
                "--set",
                "detector_epochs=4",
            ],
        )
        .unwrap();
    }
}

#[test]
fn fixed_seed_runs_write_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    builtin_pipeline(&a);
    builtin_pipeline(&b);
    let metrics = fs::read(a.join("metrics.json")).unwrap();
    assert_eq!(metrics, fs::read(b.join("metrics.json")).unwrap());
    for name in ["detector.json", "probe.bin", "detections.jsonl", "localization.jsonl"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let report: MetricsReport = serde_json::from_slice(&metrics).unwrap();
    assert_eq!(report.counts.total(), 2);
}

#[test]
fn localize_without_a_probe_asks_for_train_probe() {
    let dir = tempfile::tempdir().unwrap();
    cli(dir.path(), &["gen-corpus", "--seed", "1", "--set", "corpus_size=20"]).unwrap();
    let e = cli(dir.path(), &["localize"]).unwrap_err();
    assert!(e.to_string().contains("run train-probe first"), "{e}");
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn missing_corpus_names_gen_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let e = cli(dir.path(), &["train-probe", "--seed", "1"]).unwrap_err();
    assert!(e.to_string().contains("run gen-corpus first"), "{e}");
}

#[test]
fn training_needs_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let e = cli(dir.path(), &["gen-corpus"]).unwrap_err();
    assert!(e.to_string().contains("seed"), "{e}");
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn planted_pipeline_localizes_hallucinated_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    cli(out, &["gen-corpus", "--seed", "7"]).unwrap();
    cli(out, &["extract-hidden", "--source", "planted", "--seed", "7"]).unwrap();
    cli(out, &["train-detector", "--head-only", "--seed", "7"]).unwrap();
    cli(out, &["train-probe", "--seed", "7"]).unwrap();
    cli(out, &["localize"]).unwrap();
    cli(out, &["evaluate"]).unwrap();
    let text = cli(out, &["report"]).unwrap().unwrap();
    assert!(text.contains("| Top-1 |"), "{text}");
    let m: MetricsReport = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert!(m.top_1.0 >= 0.9, "{m:?}");
    assert!(m.evaluated > 0);
}

#[test]
fn external_hidden_states_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    builtin_pipeline(&out);
    // hand the builtin files to a fresh run as if an extractor wrote them
    let external = dir.path().join("external");
    fs::create_dir(&external).unwrap();
    for entry in fs::read_dir(out.join("hidden")).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, external.join(p.file_name().unwrap())).unwrap();
    }
    let ext = external.display().to_string();
    let set = format!("hidden_dir={ext}");
    cli(&out, &["extract-hidden", "--source", "external", "--set", &set]).unwrap();
    let config = RunConfig {
        out: out.clone(),
        ..RunConfig::default()
    };
    let manifest = HiddenManifest::load(&Layout::new(&config)).unwrap();
    assert_eq!(manifest.files.len(), 20);
    assert_eq!(manifest.width, 32);

    let victim = external.join(manifest.files.values().next().unwrap());
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 4]).unwrap();
    let e = cli(&out, &["extract-hidden", "--source", "external", "--set", &set]).unwrap_err();
    assert!(e.to_string().contains("truncated"), "{e}");
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn binary_reports_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_cohallo");
    let status = Process::new(bin)
        .args(["localize", "--out"])
        .arg(dir.path())
        .env("COHALLO_LOG", "error")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let status = Process::new(bin)
        .args(["gen-corpus", "--seed", "1", "--set", "corpus_size=20", "--out"])
        .arg(dir.path())
        .env("COHALLO_LOG", "error")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let help = Process::new(bin).arg("--help").output().unwrap();
    let help = String::from_utf8(help.stdout).unwrap();
    assert!(help.contains("probe_k") && help.contains("COHALLO_LOG"), "{help}");
}

#[test]
fn commands_do_not_touch_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    cli(&out, &["gen-corpus", "--seed", "2", "--set", "corpus_size=20"]).unwrap();
    let input = dir.path().join("input.jsonl");
    fs::copy(out.join("corpus.jsonl"), &input).unwrap();
    let before = fs::read(&input).unwrap();
    let other = dir.path().join("other");
    let set = format!("corpus={}", input.display());
    cli(&other, &["gen-corpus", "--seed", "2", "--set", &set]).unwrap();
    assert_eq!(fs::read(&input).unwrap(), before);
    assert_eq!(fs::read(other.join("corpus.jsonl")).unwrap(), before);
    assert_eq!(
        fs::read(other.join("split.json")).unwrap(),
        fs::read(out.join("split.json")).unwrap()
    );
}
