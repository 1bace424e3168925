use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::{mean_pool, ClassifierHead, EncoderClassifier, DEFAULT_THRESHOLD};
use super::hidden::HiddenMatrix;
use super::model::{terminal_texts, EncoderParams, EncoderShape, Vocab};
use crate::corpus::{CorpusSplit, Label, Sample};
use crate::metrics::{prf1, ConfusionCounts};
use crate::optim::{clip_global_norm, AdamW, AdamWConfig, Parameters};
use crate::syntax::parse_source;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub shape: EncoderShape,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            shape: EncoderShape::default(),
            epochs: 20,
            lr: 5e-4,
            weight_decay: 0.01,
            clip_norm: 1.0,
            batch_size: 8,
            dropout: 0.1,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Mean training loss (no dropout) and validation F1 after an epoch; epoch 0
/// is the initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_f1: f64,
}

#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Token ids and label of one training example.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub label: Label,
}

fn tokenize(samples: &[Sample]) -> Result<Vec<(Vec<String>, Label)>> {
    samples
        .par_iter()
        .map(|s| {
            let ast = parse_source(&s.code, &s.lang)?;
            let texts = terminal_texts(&s.code, &ast.terminals())
                .into_iter()
                .map(str::to_string)
                .collect();
            Ok((texts, s.label))
        })
        .collect()
}

fn to_ids(model: &EncoderParams, toks: &[(Vec<String>, Label)]) -> Vec<Encoded> {
    toks.iter()
        .map(|(t, label)| Encoded {
            ids: model.token_ids(&t.iter().map(String::as_str).collect::<Vec<_>>()),
            label: *label,
        })
        .collect()
}

/// Trains the built-in encoder and head with cross-entropy, AdamW and
/// global-norm clipping, keeping the epoch with the best validation F1 (the
/// later one on ties).
pub fn train_detector(split: &CorpusSplit, config: &DetectorConfig) -> Result<Trained<EncoderClassifier>> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let train_toks = tokenize(&split.train)?;
    let valid_toks = tokenize(&split.valid)?;
    let vocab = Vocab::build(train_toks.iter().flat_map(|(t, _)| t.iter().map(String::as_str)));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let encoder = EncoderParams::random(vocab, config.shape, &mut rng)?;
    let head = ClassifierHead::random(config.shape.width, config.dropout, &mut rng);
    let model = EncoderClassifier { encoder, head };
    let train = to_ids(&model.encoder, &train_toks);
    let valid = to_ids(&model.encoder, &valid_toks);
    fit_encoder(model, &train, &valid, config, &mut rng)
}

/// Training loop over pre-tokenized examples, starting from `model`.
pub fn fit_encoder(
    model: EncoderClassifier,
    train: &[Encoded],
    valid: &[Encoded],
    config: &DetectorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Trained<EncoderClassifier>> {
    config.validate()?;
    let width = model.encoder.width();
    fit(
        model,
        train,
        valid,
        config,
        rng,
        |m, ex, mask, grad| m.loss_backward(&ex.ids, ex.label, mask, grad),
        |m, ex| m.probability(&ex.ids),
        |ex| ex.label,
        width,
    )
}

/// Trains a head alone on fixed hidden rows.
pub fn train_head(
    train: &[(HiddenMatrix, Label)],
    valid: &[(HiddenMatrix, Label)],
    config: &DetectorConfig,
) -> Result<Trained<ClassifierHead>> {
    config.validate()?;
    let width = train
        .first()
        .map(|(h, _)| h.width())
        .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?;
    if let Some((h, _)) = train.iter().chain(valid).find(|(h, _)| h.width() != width) {
        return Err(Error::Shape(format!(
            "`{}` has width {} but the first sample has {width}",
            h.sample_id,
            h.width()
        )));
    }
    let pooled = |set: &[(HiddenMatrix, Label)]| -> Vec<(Vec<f64>, Label)> {
        set.iter().map(|(h, l)| (mean_pool(&h.rows), *l)).collect()
    };
    let (train, valid) = (pooled(train), pooled(valid));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let head = ClassifierHead::random(width, config.dropout, &mut rng);
    fit(
        head,
        &train,
        &valid,
        config,
        &mut rng,
        |h, (x, label), mask, grad| Ok(h.loss_backward(x, mask, *label, grad).0),
        |h, (x, _)| Ok(h.probabilities(x)?[1]),
        |(_, label)| *label,
        width,
    )
}

#[allow(clippy::too_many_arguments)]
fn fit<M, E, LG, P, L>(
    mut model: M,
    train: &[E],
    valid: &[E],
    config: &DetectorConfig,
    rng: &mut ChaCha8Rng,
    loss_grad: LG,
    prob: P,
    label_of: L,
    width: usize,
) -> Result<Trained<M>>
where
    M: Parameters + Clone + Sync,
    E: Sync,
    LG: Fn(&M, &E, Option<&[f64]>, &mut M) -> Result<f64>,
    P: Fn(&M, &E) -> Result<f64> + Sync,
    L: Fn(&E) -> Label + Sync,
{
    let evaluate = |m: &M, epoch: usize| -> Result<EpochRecord> {
        let mut grad_scratch = m.clone();
        let mut loss = 0.0;
        let mut correct = 0usize;
        for ex in train {
            grad_scratch.fill_zero();
            loss += loss_grad(m, ex, None, &mut grad_scratch)?;
            let p = prob(m, ex)?;
            correct += usize::from((p >= config.threshold) == label_of(ex).is_hallucinated());
        }
        let n = train.len().max(1) as f64;
        let valid_f1 = f1_on(m, valid, &prob, &label_of, config.threshold)?;
        Ok(EpochRecord {
            epoch,
            train_loss: loss / n,
            train_accuracy: correct as f64 / n,
            valid_f1,
        })
    };

    let mut history = vec![evaluate(&model, 0)?];
    let mut best = (model.clone(), 0usize, history[0].valid_f1);
    let mut opt = AdamW::new(&model, AdamWConfig::new(config.lr, config.weight_decay));
    let mut grad = model.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    let keep = 1.0 - config.dropout;
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            grad.fill_zero();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mask: Option<Vec<f64>> = (config.dropout > 0.0).then(|| {
                    (0..width)
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect()
                });
                batch_loss += loss_grad(&model, &train[i], mask.as_deref(), &mut grad)?;
            }
            step += 1;
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            for t in grad.tensors_mut() {
                t.iter_mut().for_each(|v| *v *= scale);
            }
            if !batch_loss.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged {
                    stage: "detector",
                    step,
                    loss: batch_loss,
                });
            }
            clip_global_norm(&mut grad, config.clip_norm);
            opt.step(&mut model, &grad);
        }
        let record = evaluate(&model, epoch)?;
        if !record.train_loss.is_finite() {
            return Err(Error::Diverged {
                stage: "detector",
                step,
                loss: record.train_loss,
            });
        }
        log::debug!(
            "epoch {epoch}: loss {:.6} accuracy {:.4} valid F1 {:.4}",
            record.train_loss,
            record.train_accuracy,
            record.valid_f1
        );
        if record.valid_f1 >= best.2 {
            best = (model.clone(), epoch, record.valid_f1);
        }
        history.push(record);
    }
    Ok(Trained {
        model: best.0,
        history,
        best_epoch: best.1,
    })
}

fn f1_on<M: Sync, E: Sync>(
    model: &M,
    set: &[E],
    prob: &(impl Fn(&M, &E) -> Result<f64> + Sync),
    label_of: &(impl Fn(&E) -> Label + Sync),
    threshold: f64,
) -> Result<f64> {
    let pairs = set
        .par_iter()
        .map(|ex| {
            let predicted = if prob(model, ex)? >= threshold {
                Label::Hallucinated
            } else {
                Label::Clean
            };
            Ok((label_of(ex), predicted))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(prf1(&ConfusionCounts::from_pairs(pairs)).2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic;

    #[test]
    fn zero_epochs_return_the_initialization() {
        let samples = generate_synthetic(3, 20).unwrap();
        let split = crate::corpus::split_corpus(&samples, 1).unwrap();
        let config = DetectorConfig {
            epochs: 0,
            shape: EncoderShape {
                width: 8,
                heads: 2,
                layers: 1,
                ffn_width: 8,
            },
            seed: 4,
            ..DetectorConfig::default()
        };
        let a = train_detector(&split, &config).unwrap();
        let b = train_detector(&split, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.best_epoch, 0);
        assert_eq!(a.history.len(), 1);
    }
}
