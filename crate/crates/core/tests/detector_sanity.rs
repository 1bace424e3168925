use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cohallo_core::corpus::{generate_synthetic, split_corpus, CorpusSplit, Sample};
use cohallo_core::encoder::{classify, train_detector, train_head, DetectorConfig, HiddenMatrix};
use cohallo_core::metrics::{prf1, ConfusionCounts};
use cohallo_core::planted::{plant_corpus, PlantedConfig};
use cohallo_core::Label;

/// Ten distinct programs, five of each class.
fn memorization_corpus() -> Vec<Sample> {
    generate_synthetic(11, 20)
        .unwrap()
        .into_iter()
        .enumerate()
        .filter(|(i, s)| (i / 2 < 5) == (s.label == Label::Clean))
        .map(|(_, s)| s)
        .collect()
}

#[test]
fn small_encoder_memorizes_ten_samples() {
    let samples = memorization_corpus();
    assert_eq!(samples.len(), 10);
    let split = CorpusSplit {
        train: samples.clone(),
        valid: samples,
        test: Vec::new(),
    };
    let config = DetectorConfig {
        epochs: 20,
        lr: 1e-3,
        dropout: 0.0,
        weight_decay: 0.0,
        batch_size: 10,
        seed: 1,
        ..DetectorConfig::default()
    };
    let trained = train_detector(&split, &config).unwrap();
    let losses: Vec<f64> = trained.history.iter().map(|h| h.train_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    assert_eq!(trained.history.last().unwrap().train_accuracy, 1.0);
}

#[test]
fn head_separates_planted_class_offsets() {
    let samples = generate_synthetic(7, 200).unwrap();
    let split = split_corpus(&samples, 7).unwrap();
    let all: Vec<Sample> = [&split.train, &split.valid, &split.test]
        .into_iter()
        .flatten()
        .cloned()
        .collect();
    let config = PlantedConfig {
        noise: 0.1,
        ..PlantedConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (_, items) = plant_corpus(&all, &BTreeSet::new(), config, &mut rng).unwrap();
    let rows: Vec<(HiddenMatrix, Label)> = items.into_iter().map(|i| (i.hidden, i.label)).collect();
    let (a, b) = (split.train.len(), split.train.len() + split.valid.len());
    let trained = train_head(&rows[..a], &rows[a..b], &DetectorConfig::default()).unwrap();
    let counts = ConfusionCounts::from_pairs(
        rows[b..]
            .iter()
            .map(|(h, gold)| (*gold, classify(h, &trained.model).unwrap().label)),
    );
    let (_, _, f1) = prf1(&counts);
    assert!(f1 >= 0.95, "test F1 {f1}");
}
