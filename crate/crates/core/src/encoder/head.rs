use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hidden::HiddenMatrix;
use super::model::{encode_terminals, terminal_texts, EncoderParams, MAX_TERMINALS};
use crate::corpus::Label;
use crate::linalg::{softmax, Matrix};
use crate::optim::Parameters;
use crate::syntax::Terminal;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Linear two-way classifier over the mean of a sample's terminal rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    /// `D x 2`; column 1 scores the hallucinated class.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    /// Drop probability applied to the pooled vector during training.
    pub dropout: f64,
}

impl ClassifierHead {
    pub fn zeros(width: usize, dropout: f64) -> Self {
        Self {
            weight: Matrix::zeros(width, 2),
            bias: vec![0.0; 2],
            dropout,
        }
    }

    pub fn random<R: Rng>(width: usize, dropout: f64, rng: &mut R) -> Self {
        Self {
            weight: Matrix::random_normal(width, 2, (1.0 / width as f64).sqrt(), rng),
            bias: vec![0.0; 2],
            dropout,
        }
    }

    pub fn width(&self) -> usize {
        self.weight.rows()
    }

    pub fn is_finite(&self) -> bool {
        Parameters::is_finite(self)
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.width() || self.bias.len() != 2 || self.weight.cols() != 2 {
            return Err(Error::Shape(format!(
                "head expects width {} but hidden rows have width {width}",
                self.width()
            )));
        }
        Ok(())
    }

    /// Class probabilities `[clean, hallucinated]` for a pooled vector.
    pub fn probabilities(&self, pooled: &[f64]) -> Result<Vec<f64>> {
        self.check_width(pooled.len())?;
        Ok(softmax(&self.logits(pooled)))
    }

    fn logits(&self, pooled: &[f64]) -> Vec<f64> {
        let mut z = self.weight.vec_mul(pooled);
        z.iter_mut().zip(&self.bias).for_each(|(a, b)| *a += b);
        z
    }

    /// Cross-entropy of one pooled vector against `label`, accumulating the
    /// head gradient. `mask` multiplies the pooled vector before the linear
    /// layer. Returns the loss and the gradient on the (unmasked) pooled vector.
    pub(crate) fn loss_backward(
        &self,
        pooled: &[f64],
        mask: Option<&[f64]>,
        label: Label,
        grad: &mut ClassifierHead,
    ) -> (f64, Vec<f64>) {
        let dropped: Vec<f64> = match mask {
            Some(m) => pooled.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => pooled.to_vec(),
        };
        let p = softmax(&self.logits(&dropped));
        let y = label.as_u8() as usize;
        let loss = -p[y].max(f64::MIN_POSITIVE).ln();
        let dz: Vec<f64> = (0..2).map(|k| p[k] - f64::from(u8::from(k == y))).collect();
        for (r, x) in dropped.iter().enumerate() {
            for (k, d) in dz.iter().enumerate() {
                let g = grad.weight.get(r, k) + x * d;
                grad.weight.set(r, k, g);
            }
        }
        grad.bias.iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
        let mut d_pooled = self.weight.mul_vec(&dz);
        if let Some(m) = mask {
            d_pooled.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        (loss, d_pooled)
    }
}

impl Parameters for ClassifierHead {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weight.data(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.data_mut(), &mut self.bias]
    }
}

/// Column means of `rows`; the zero vector when there are no rows.
pub fn mean_pool(rows: &Matrix) -> Vec<f64> {
    let mut sums = rows.column_sums();
    if rows.rows() > 0 {
        let n = rows.rows() as f64;
        sums.iter_mut().for_each(|v| *v /= n);
    }
    sums
}

/// Outcome of running the detector on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub sample_id: String,
    pub label: Label,
    /// Probability of the hallucinated class.
    pub probability: f64,
    pub hidden: HiddenMatrix,
}

/// Classifies a sample from its hidden rows with the default threshold.
pub fn classify(hidden: &HiddenMatrix, head: &ClassifierHead) -> Result<DetectionResult> {
    classify_with_threshold(hidden, head, DEFAULT_THRESHOLD)
}

pub fn classify_with_threshold(
    hidden: &HiddenMatrix,
    head: &ClassifierHead,
    threshold: f64,
) -> Result<DetectionResult> {
    let probability = head.probabilities(&mean_pool(&hidden.rows))?[1];
    Ok(decision(&hidden.sample_id, probability, threshold, hidden.clone()))
}

fn decision(id: &str, probability: f64, threshold: f64, hidden: HiddenMatrix) -> DetectionResult {
    DetectionResult {
        sample_id: id.to_string(),
        label: if probability >= threshold {
            Label::Hallucinated
        } else {
            Label::Clean
        },
        probability,
        hidden,
    }
}

/// The built-in encoder together with its classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderClassifier {
    pub encoder: EncoderParams,
    pub head: ClassifierHead,
}

impl EncoderClassifier {
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    /// Cross-entropy for a token sequence, without dropout.
    pub fn loss(&self, ids: &[usize], label: Label) -> Result<f64> {
        let mut scratch = self.zeros_like();
        self.loss_backward(ids, label, None, &mut scratch)
    }

    /// Loss and full gradient for a token sequence, without dropout.
    pub fn loss_and_gradient(&self, ids: &[usize], label: Label) -> Result<(f64, Self)> {
        let mut grad = self.zeros_like();
        let loss = self.loss_backward(ids, label, None, &mut grad)?;
        Ok((loss, grad))
    }

    pub(crate) fn loss_backward(
        &self,
        ids: &[usize],
        label: Label,
        mask: Option<&[f64]>,
        grad: &mut Self,
    ) -> Result<f64> {
        self.head.check_width(self.encoder.width())?;
        let cache = self.encoder.forward(ids)?;
        let top = cache.top();
        let body = ids.len().saturating_sub(2);
        let pooled = pool_body(top, body);
        let (loss, d_pooled) = self.head.loss_backward(&pooled, mask, label, &mut grad.head);
        let mut d_top = Matrix::zeros(top.rows(), top.cols());
        if body > 0 {
            for r in 1..=body {
                for (c, g) in d_top.row_mut(r).iter_mut().enumerate() {
                    *g = d_pooled[c] / body as f64;
                }
            }
        }
        self.encoder.backward(&cache, &d_top, &mut grad.encoder);
        Ok(loss)
    }

    /// Probability of the hallucinated class for a token sequence.
    pub fn probability(&self, ids: &[usize]) -> Result<f64> {
        self.head.check_width(self.encoder.width())?;
        let cache = self.encoder.forward(ids)?;
        let pooled = pool_body(cache.top(), ids.len().saturating_sub(2));
        Ok(self.head.probabilities(&pooled)?[1])
    }

    /// Classifies a parsed sample and returns its terminal rows at `layer`.
    pub fn detect(
        &self,
        id: &str,
        code: &str,
        terminals: &[Terminal],
        layer: usize,
        threshold: f64,
    ) -> Result<DetectionResult> {
        let ids = self.encoder.token_ids(&terminal_texts(code, terminals));
        let probability = self.probability(&ids)?;
        let hidden = encode_terminals(id, code, terminals, &self.encoder, layer)?;
        Ok(decision(id, probability, threshold, hidden))
    }

    /// Token ids of a parsed sample, truncated to the sequence cap.
    pub fn token_ids(&self, code: &str, terminals: &[Terminal]) -> Vec<usize> {
        let texts = terminal_texts(code, terminals);
        self.encoder.token_ids(&texts[..texts.len().min(MAX_TERMINALS)])
    }
}

fn pool_body(top: &Matrix, body: usize) -> Vec<f64> {
    let mut pooled = vec![0.0; top.cols()];
    for r in 1..=body {
        pooled.iter_mut().zip(top.row(r)).for_each(|(a, b)| *a += b);
    }
    if body > 0 {
        pooled.iter_mut().for_each(|v| *v /= body as f64);
    }
    pooled
}

impl Parameters for EncoderClassifier {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}

/// A trained detector: either the built-in encoder with its head, or a head
/// alone over externally produced hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Detector {
    Encoder(EncoderClassifier),
    HeadOnly(ClassifierHead),
}

impl Detector {
    pub fn head(&self) -> &ClassifierHead {
        match self {
            Detector::Encoder(m) => &m.head,
            Detector::HeadOnly(h) => h,
        }
    }
}
