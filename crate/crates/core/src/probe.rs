//! Linear probe from hidden vectors into a syntactic subspace, read out as a
//! `(d, c, u)` tuple.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::HiddenMatrix;
use crate::io::atomic_write;
use crate::linalg::{argmax, dot, softmax, Matrix};
use crate::optim::{clip_global_norm, AdamW, AdamWConfig, Parameters};
use crate::syntax::{decode_tuple, Span, Terminal, TupleEncoding, EMPTY_LABEL, NIL_LABEL};
use crate::{Error, Result};

pub const UNK_LABEL: &str = "<unk>";
pub const PROBE_MAGIC: &[u8; 4] = b"CHLP";
pub const PROBE_VERSION: u32 = 1;
const FLAG_DIFFERENCE: u32 = 1;

/// Feature of an adjacent pair `(s_i, s_{i+1})` that the `c` scores read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairFeature {
    /// `(s_i + s_{i+1}) / 2`
    #[default]
    Midpoint,
    /// `s_{i+1} - s_i`
    Difference,
}

/// Label vocabulary with `<unk>` at index 0 and a sentinel at index 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    /// `<unk>`, `sentinel`, then the other distinct labels sorted.
    pub fn build<'a>(sentinel: &str, labels: impl IntoIterator<Item = &'a str>) -> Self {
        let rest: BTreeSet<&str> = labels
            .into_iter()
            .filter(|l| *l != UNK_LABEL && *l != sentinel)
            .collect();
        let all = [UNK_LABEL, sentinel]
            .into_iter()
            .chain(rest)
            .map(str::to_string)
            .collect();
        Self::from_labels(all)
    }

    pub fn from_labels(labels: Vec<String>) -> Self {
        let index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Index of `label`, or of `<unk>` when unseen.
    pub fn id(&self, label: &str) -> usize {
        self.index.get(label).copied().unwrap_or(0)
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Projection `B` (`D x k`) and label embeddings `C` (`|V_c| x k`) and `U`
/// (`|V_u| x k`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    pub b: Matrix,
    pub c: Matrix,
    pub u: Matrix,
    pub c_vocab: LabelVocab,
    pub u_vocab: LabelVocab,
    pub pair_feature: PairFeature,
}

impl Parameters for ProbeParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.b.data(), self.c.data(), self.u.data()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.b.data_mut(), self.c.data_mut(), self.u.data_mut()]
    }
}

impl ProbeParams {
    /// Random parameters with vocabularies frozen from `gold` tuples.
    pub fn init<'a>(
        width: usize,
        k: usize,
        gold: impl IntoIterator<Item = &'a TupleEncoding> + Clone,
        pair_feature: PairFeature,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let c_vocab = LabelVocab::build(
            NIL_LABEL,
            gold.clone().into_iter().flat_map(|t| t.c.iter().map(String::as_str)),
        );
        let u_vocab = LabelVocab::build(
            EMPTY_LABEL,
            gold.into_iter().flat_map(|t| t.u.iter().map(String::as_str)),
        );
        let mut p = Self {
            b: Matrix::random_normal(width, k, (1.0 / width as f64).sqrt(), rng),
            c: Matrix::random_normal(c_vocab.len(), k, 0.1 / (k as f64).sqrt(), rng),
            u: Matrix::random_normal(u_vocab.len(), k, 0.1 / (k as f64).sqrt(), rng),
            c_vocab,
            u_vocab,
            pair_feature,
        };
        p.round_to_f32();
        p
    }

    pub fn width(&self) -> usize {
        self.b.rows()
    }

    pub fn k(&self) -> usize {
        self.b.cols()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    /// Rounds every entry to `f32` so the parameters survive saving exactly.
    pub fn round_to_f32(&mut self) {
        self.b.round_to_f32();
        self.c.round_to_f32();
        self.u.round_to_f32();
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if self.c.cols() != k || self.u.cols() != k {
            return Err(Error::Shape(format!(
                "B has {k} columns but C has {} and U has {}",
                self.c.cols(),
                self.u.cols()
            )));
        }
        if self.c.rows() != self.c_vocab.len() || self.u.rows() != self.u_vocab.len() {
            return Err(Error::Shape("label matrices disagree with vocabulary sizes".into()));
        }
        if self.c_vocab.labels().get(..2) != Some(&[UNK_LABEL.into(), NIL_LABEL.into()])
            || self.u_vocab.labels().get(..2) != Some(&[UNK_LABEL.into(), EMPTY_LABEL.into()])
        {
            return Err(Error::Shape(
                "vocabularies must start with <unk> and their sentinel".into(),
            ));
        }
        if !Parameters::is_finite(self) {
            return Err(Error::NonFinite("probe parameters".into()));
        }
        Ok(())
    }

    fn pair_feature(&self, si: &[f64], sj: &[f64]) -> Vec<f64> {
        match self.pair_feature {
            PairFeature::Midpoint => si.iter().zip(sj).map(|(a, b)| 0.5 * (a + b)).collect(),
            PairFeature::Difference => si.iter().zip(sj).map(|(a, b)| b - a).collect(),
        }
    }
}

/// `s = B^T h`.
pub fn project(h: &[f64], params: &ProbeParams) -> Result<Vec<f64>> {
    if h.len() != params.width() {
        return Err(Error::Shape(format!(
            "hidden width {} but probe expects {}",
            h.len(),
            params.width()
        )));
    }
    Ok(params.b.vec_mul(h))
}

fn project_all(hidden: &HiddenMatrix, params: &ProbeParams) -> Result<Matrix> {
    if hidden.width() != params.width() {
        return Err(Error::Shape(format!(
            "`{}` has width {} but probe expects {}",
            hidden.sample_id,
            hidden.width(),
            params.width()
        )));
    }
    if hidden.n() == 0 {
        return Err(Error::Shape(format!("`{}` has no terminals", hidden.sample_id)));
    }
    Ok(hidden.rows.matmul(&params.b))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Predicted tuple: squared distances of adjacent projections, and the
/// highest-scoring `c` and `u` labels.
pub fn predict_tuple(hidden: &HiddenMatrix, params: &ProbeParams) -> Result<TupleEncoding> {
    let s = project_all(hidden, params)?;
    let n = s.rows();
    let mut t = TupleEncoding {
        d: Vec::with_capacity(n - 1),
        c: Vec::with_capacity(n - 1),
        u: Vec::with_capacity(n),
    };
    for i in 0..n.saturating_sub(1) {
        t.d.push(sq_dist(s.row(i), s.row(i + 1)));
        let f = params.pair_feature(s.row(i), s.row(i + 1));
        t.c.push(params.c_vocab.label(argmax(&params.c.mul_vec(&f))).to_string());
    }
    for j in 0..n {
        t.u.push(params.u_vocab.label(argmax(&params.u.mul_vec(s.row(j)))).to_string());
    }
    Ok(t)
}

/// Loss terms from raw predictions: mean absolute error of `d`, and mean
/// cross-entropy of the `c` and `u` score rows against gold label ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub distance: f64,
    pub c: f64,
    pub u: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.distance + self.c + self.u
    }
}

fn mean_or_zero(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn cross_entropy(logits: &[f64], gold: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[gold]
}

/// Loss of predicted distances and label scores against gold values.
pub fn loss_from_scores(
    d_hat: &[f64],
    c_scores: &Matrix,
    u_scores: &Matrix,
    gold_d: &[f64],
    gold_c: &[usize],
    gold_u: &[usize],
) -> Result<LossTerms> {
    let pairs = d_hat.len();
    if gold_d.len() != pairs || c_scores.rows() != pairs || gold_c.len() != pairs || u_scores.rows() != gold_u.len() {
        return Err(Error::Shape("prediction and gold lengths differ".into()));
    }
    let distance = mean_or_zero(d_hat.iter().zip(gold_d).map(|(a, b)| (a - b).abs()).sum(), pairs);
    let c = mean_or_zero(
        (0..pairs).map(|i| cross_entropy(c_scores.row(i), gold_c[i])).sum(),
        pairs,
    );
    let u = mean_or_zero(
        (0..gold_u.len())
            .map(|j| cross_entropy(u_scores.row(j), gold_u[j]))
            .sum(),
        gold_u.len(),
    );
    Ok(LossTerms { distance, c, u })
}

fn check_pair(hidden: &HiddenMatrix, gold: &TupleEncoding) -> Result<()> {
    gold.validate()?;
    if hidden.n() != gold.n() {
        return Err(Error::Alignment(format!(
            "`{}` has {} hidden rows but its gold tuple has {} terminals",
            hidden.sample_id,
            hidden.n(),
            gold.n()
        )));
    }
    Ok(())
}

/// Probe loss of one sample.
pub fn probe_loss(hidden: &HiddenMatrix, gold: &TupleEncoding, params: &ProbeParams) -> Result<LossTerms> {
    let mut scratch = params.zeros_like();
    loss_backward(hidden, gold, params, &mut scratch)
}

/// Probe loss of one sample and its gradient with respect to `B`, `C`, `U`.
pub fn probe_loss_and_gradient(
    hidden: &HiddenMatrix,
    gold: &TupleEncoding,
    params: &ProbeParams,
) -> Result<(LossTerms, ProbeParams)> {
    let mut grad = params.zeros_like();
    let terms = loss_backward(hidden, gold, params, &mut grad)?;
    Ok((terms, grad))
}

fn loss_backward(
    hidden: &HiddenMatrix,
    gold: &TupleEncoding,
    params: &ProbeParams,
    grad: &mut ProbeParams,
) -> Result<LossTerms> {
    check_pair(hidden, gold)?;
    let s = project_all(hidden, params)?;
    let (n, k) = (s.rows(), s.cols());
    let pairs = n - 1;
    let mut ds = Matrix::zeros(n, k);
    let mut terms = LossTerms {
        distance: 0.0,
        c: 0.0,
        u: 0.0,
    };
    let pair_scale = if pairs > 0 { 1.0 / pairs as f64 } else { 0.0 };
    for i in 0..pairs {
        let (si, sj) = (s.row(i), s.row(i + 1));
        let diff: Vec<f64> = si.iter().zip(sj).map(|(a, b)| a - b).collect();
        let d_hat = dot(&diff, &diff);
        let err = d_hat - gold.d[i];
        terms.distance += err.abs() * pair_scale;
        let g = err.signum() * pair_scale * f64::from(u8::from(err != 0.0));
        for (c, dc) in diff.iter().enumerate() {
            ds.row_mut(i)[c] += 2.0 * g * dc;
            ds.row_mut(i + 1)[c] -= 2.0 * g * dc;
        }

        let f = params.pair_feature(si, sj);
        let logits = params.c.mul_vec(&f);
        let y = params.c_vocab.id(&gold.c[i]);
        terms.c += cross_entropy(&logits, y) * pair_scale;
        let mut dz = softmax(&logits);
        dz[y] -= 1.0;
        dz.iter_mut().for_each(|v| *v *= pair_scale);
        for (l, dzl) in dz.iter().enumerate() {
            for (gc, fc) in grad.c.row_mut(l).iter_mut().zip(&f) {
                *gc += dzl * fc;
            }
        }
        let df = params.c.vec_mul(&dz);
        let (wi, wj) = match params.pair_feature {
            PairFeature::Midpoint => (0.5, 0.5),
            PairFeature::Difference => (-1.0, 1.0),
        };
        for (c, dfc) in df.iter().enumerate() {
            ds.row_mut(i)[c] += wi * dfc;
            ds.row_mut(i + 1)[c] += wj * dfc;
        }
    }
    let u_scale = 1.0 / n as f64;
    for j in 0..n {
        let sj = s.row(j);
        let logits = params.u.mul_vec(sj);
        let y = params.u_vocab.id(&gold.u[j]);
        terms.u += cross_entropy(&logits, y) * u_scale;
        let mut dz = softmax(&logits);
        dz[y] -= 1.0;
        dz.iter_mut().for_each(|v| *v *= u_scale);
        for (l, dzl) in dz.iter().enumerate() {
            for (gu, sc) in grad.u.row_mut(l).iter_mut().zip(sj) {
                *gu += dzl * sc;
            }
        }
        let dsj = params.u.vec_mul(&dz);
        ds.row_mut(j).iter_mut().zip(&dsj).for_each(|(a, b)| *a += b);
    }
    grad.b.add_assign(&hidden.rows.t_matmul(&ds));
    Ok(terms)
}

/// Hidden rows paired with the gold tuple of the same sample.
#[derive(Debug, Clone, Default)]
pub struct ProbeDataset {
    pub items: Vec<(HiddenMatrix, TupleEncoding)>,
}

impl ProbeDataset {
    pub fn new(items: Vec<(HiddenMatrix, TupleEncoding)>) -> Result<Self> {
        for (h, t) in &items {
            check_pair(h, t)?;
        }
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn placeholder_leaves(spans: &[Span]) -> Vec<Terminal> {
    spans
        .iter()
        .map(|s| Terminal {
            label: String::new(),
            span: *s,
        })
        .collect()
}

/// Whether the predicted and gold tuples decode to the same binary tree.
pub fn tree_match(pred: &TupleEncoding, gold: &TupleEncoding, spans: &[Span]) -> bool {
    let leaves = placeholder_leaves(spans);
    match (decode_tuple(pred, &leaves), decode_tuple(gold, &leaves)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

/// Share of samples whose predicted tree equals the gold tree.
pub fn exact_match_rate(data: &ProbeDataset, params: &ProbeParams) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let hits = data
        .items
        .par_iter()
        .map(|(h, gold)| Ok(usize::from(tree_match(&predict_tuple(h, params)?, gold, &h.spans))))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub k: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
    pub pair_feature: PairFeature,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            k: 128,
            epochs: 50,
            lr: 2e-2,
            weight_decay: 0.0,
            clip_norm: 5.0,
            batch_size: 8,
            cosine_decay: true,
            pair_feature: PairFeature::Midpoint,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_exact_match: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedProbe {
    pub params: ProbeParams,
    pub history: Vec<ProbeEpoch>,
    pub best_epoch: usize,
}

/// Fits `B`, `C` and `U` with AdamW on the probe loss; hidden rows are never
/// modified. Keeps the epoch with the best validation exact-match rate (the
/// later one on ties; epoch 0 is the initialization).
pub fn train_probe(train: &ProbeDataset, valid: &ProbeDataset, config: &ProbeConfig) -> Result<TrainedProbe> {
    let width = train
        .items
        .first()
        .map(|(h, _)| h.width())
        .ok_or_else(|| Error::InvalidArgument("probe training set is empty".into()))?;
    if config.batch_size == 0 || config.k == 0 {
        return Err(Error::InvalidArgument("batch size and k must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = ProbeParams::init(
        width,
        config.k,
        train.items.iter().map(|(_, t)| t),
        config.pair_feature,
        &mut rng,
    );
    fit_probe(params, train, valid, config, &mut rng)
}

/// Training loop starting from given parameters.
pub fn fit_probe(
    mut params: ProbeParams,
    train: &ProbeDataset,
    valid: &ProbeDataset,
    config: &ProbeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainedProbe> {
    params.validate()?;
    let mean_loss = |p: &ProbeParams| -> Result<f64> {
        let total = train
            .items
            .par_iter()
            .map(|(h, t)| probe_loss(h, t, p).map(|l| l.total()))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .sum::<f64>();
        Ok(total / train.len().max(1) as f64)
    };
    let mut history = vec![ProbeEpoch {
        epoch: 0,
        train_loss: mean_loss(&params)?,
        valid_exact_match: exact_match_rate(valid, &params)?,
    }];
    let mut best = (params.clone(), 0, history[0].valid_exact_match);
    let mut opt = AdamW::new(&params, AdamWConfig::new(config.lr, config.weight_decay));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    let total_steps = (config.epochs * train.len().div_ceil(config.batch_size)).max(1);
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let parts = batch
                .par_iter()
                .map(|&i| {
                    let (h, t) = &train.items[i];
                    probe_loss_and_gradient(h, t, &params)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grad = params.zeros_like();
            let mut loss = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for (terms, g) in &parts {
                loss += terms.total() * scale;
                grad.add_scaled(g, scale);
            }
            if !loss.is_finite() || !Parameters::is_finite(&grad) {
                return Err(Error::Diverged {
                    stage: "probe",
                    step,
                    loss,
                });
            }
            clip_global_norm(&mut grad, config.clip_norm);
            if config.cosine_decay {
                let progress = (step - 1) as f64 / total_steps as f64;
                opt.set_lr(config.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            }
            opt.step(&mut params, &grad);
        }
        let mut snapshot = params.clone();
        snapshot.round_to_f32();
        let record = ProbeEpoch {
            epoch,
            train_loss: mean_loss(&snapshot)?,
            valid_exact_match: exact_match_rate(valid, &snapshot)?,
        };
        log::debug!(
            "probe epoch {epoch}: loss {:.6} exact match {:.4}",
            record.train_loss,
            record.valid_exact_match
        );
        if record.valid_exact_match >= best.2 {
            best = (snapshot, epoch, record.valid_exact_match);
        }
        history.push(record);
    }
    Ok(TrainedProbe {
        params: best.0,
        history,
        best_epoch: best.1,
    })
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Shape(format!("{v} does not fit 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes the probe: header, vocabularies, then `B`, `C`, `U` as `f32`.
pub fn probe_to_bytes(p: &ProbeParams) -> Result<Vec<u8>> {
    p.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(PROBE_MAGIC);
    out.extend_from_slice(&PROBE_VERSION.to_le_bytes());
    let flags = match p.pair_feature {
        PairFeature::Midpoint => 0,
        PairFeature::Difference => FLAG_DIFFERENCE,
    };
    out.extend_from_slice(&flags.to_le_bytes());
    for v in [p.width(), p.k(), p.c_vocab.len(), p.u_vocab.len()] {
        push_u32(&mut out, v)?;
    }
    for label in p.c_vocab.labels().iter().chain(p.u_vocab.labels()) {
        push_u32(&mut out, label.len())?;
        out.extend_from_slice(label.as_bytes());
    }
    for m in [&p.b, &p.c, &p.u] {
        for v in m.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Truncated(format!("probe file ends inside {what}")));
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        let len = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Shape(format!("{what} dimensions overflow")))?;
        let data = self
            .take(len, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}

pub fn probe_from_bytes(bytes: &[u8]) -> Result<ProbeParams> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4, "magic")? != PROBE_MAGIC {
        return Err(Error::BadMagic { expected: "CHLP" });
    }
    let version = r.u32("version")?;
    if version != PROBE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: PROBE_VERSION,
        });
    }
    let flags = r.u32("flags")?;
    if flags & !FLAG_DIFFERENCE != 0 {
        return Err(Error::Shape(format!("unknown probe flags {flags:#x}")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u32("shape header")? as usize;
    }
    let [width, k, nc, nu] = dims;
    let mut labels = Vec::with_capacity(nc + nu);
    for _ in 0..nc + nu {
        let len = r.u32("vocabulary")? as usize;
        let raw = r.take(len, "vocabulary")?;
        labels.push(String::from_utf8(raw.to_vec()).map_err(|_| Error::Shape("vocabulary entry is not UTF-8".into()))?);
    }
    let u_labels = labels.split_off(nc);
    let params = ProbeParams {
        b: r.matrix(width, k, "B")?,
        c: r.matrix(nc, k, "C")?,
        u: r.matrix(nu, k, "U")?,
        c_vocab: LabelVocab::from_labels(labels),
        u_vocab: LabelVocab::from_labels(u_labels),
        pair_feature: if flags & FLAG_DIFFERENCE != 0 {
            PairFeature::Difference
        } else {
            PairFeature::Midpoint
        },
    };
    if r.at != bytes.len() {
        return Err(Error::Shape(format!(
            "{} trailing bytes in probe file",
            bytes.len() - r.at
        )));
    }
    params.validate()?;
    Ok(params)
}

pub fn save_probe(params: &ProbeParams, path: &Path) -> Result<()> {
    atomic_write(path, &probe_to_bytes(params)?)
}

pub fn load_probe(path: &Path) -> Result<ProbeParams> {
    probe_from_bytes(&fs::read(path)?)
}
