use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hidden::{pool_by_spans, HiddenMatrix};
use super::layers::{
    ffn_backward, ffn_cached, layer_norm, layer_norm_backward, multi_head_backward, multi_head_cached, AttentionCache,
    FeedForward, MultiHeadAttention,
};
use crate::corpus::Sample;
use crate::linalg::Matrix;
use crate::optim::Parameters;
use crate::syntax::{parse_source, Terminal};
use crate::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const CLS: &str = "<cls>";
pub const SEP: &str = "<sep>";

/// Longest input including the two sentinel positions.
pub const MAX_LEN: usize = 512;
/// Most terminals a single sequence can carry.
pub const MAX_TERMINALS: usize = MAX_LEN - 2;

/// Token vocabulary over terminal source texts, sentinels first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Sentinels followed by the distinct `texts` in sorted order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut rest: Vec<&str> = texts.into_iter().collect();
        rest.sort_unstable();
        rest.dedup();
        let tokens = [PAD, UNK, CLS, SEP]
            .into_iter()
            .chain(rest.into_iter().filter(|t| ![PAD, UNK, CLS, SEP].contains(t)))
            .map(str::to_string)
            .collect::<Vec<_>>();
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.index[UNK])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Source texts of a sample's terminals.
pub fn terminal_texts<'a>(code: &'a str, terminals: &[Terminal]) -> Vec<&'a str> {
    terminals.iter().map(|t| &code[t.span.start..t.span.end]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_width: usize,
}

impl Default for EncoderShape {
    fn default() -> Self {
        Self {
            width: 32,
            heads: 2,
            layers: 2,
            ffn_width: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub attention: MultiHeadAttention,
    pub ffn: FeedForward,
}

/// Post-norm transformer encoder over terminal tokens.
///
/// Each layer computes `Y = LN(X + MultiHead(X))` then `Z = LN(Y + FFN(Y))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub vocab: Vocab,
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn random<R: Rng>(vocab: Vocab, shape: EncoderShape, rng: &mut R) -> Result<Self> {
        if shape.layers == 0 || shape.width == 0 {
            return Err(Error::InvalidArgument(
                "encoder needs at least one layer and width".into(),
            ));
        }
        let token_embedding = Matrix::random_normal(vocab.len(), shape.width, 1.0, rng);
        let position_embedding = Matrix::random_normal(MAX_LEN, shape.width, 0.1, rng);
        let layers = (0..shape.layers)
            .map(|_| {
                Ok(LayerParams {
                    attention: MultiHeadAttention::random(shape.width, shape.heads, rng)?,
                    ffn: FeedForward::random(shape.width, shape.ffn_width, rng),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            vocab,
            token_embedding,
            position_embedding,
            layers,
        })
    }

    pub fn width(&self) -> usize {
        self.token_embedding.cols()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// A zero-valued copy with the same shapes, for gradient accumulation.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    /// `<cls> tokens <sep>`, truncated to fit [`MAX_LEN`].
    pub fn token_ids(&self, texts: &[&str]) -> Vec<usize> {
        let body = texts.iter().take(MAX_TERMINALS).map(|t| self.vocab.id(t));
        std::iter::once(self.vocab.id(CLS))
            .chain(body)
            .chain(std::iter::once(self.vocab.id(SEP)))
            .collect()
    }

    pub(crate) fn forward(&self, ids: &[usize]) -> Result<ForwardCache> {
        if ids.len() > MAX_LEN {
            return Err(Error::Shape(format!("{} positions exceed {MAX_LEN}", ids.len())));
        }
        let d = self.width();
        let mut x = Matrix::zeros(ids.len(), d);
        for (pos, &id) in ids.iter().enumerate() {
            let (tok, posv) = (self.token_embedding.row(id), self.position_embedding.row(pos));
            for (c, out) in x.row_mut(pos).iter_mut().enumerate() {
                *out = tok[c] + posv[c];
            }
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let attn = multi_head_cached(&x, &layer.attention)?;
            let mut res1 = x.clone();
            res1.add_assign(&attn.out);
            let y = layer_norm(&res1);
            let (pre, f) = ffn_cached(&y, &layer.ffn)?;
            let mut res2 = y.clone();
            res2.add_assign(&f);
            let z = layer_norm(&res2);
            let next = z.clone();
            layers.push(LayerCache {
                input: x,
                attn,
                res1,
                y,
                pre,
                res2,
                z,
            });
            x = next;
        }
        Ok(ForwardCache {
            ids: ids.to_vec(),
            layers,
        })
    }

    /// Backpropagates a gradient on the last layer's output into `grad`.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_top: &Matrix, grad: &mut EncoderParams) {
        let mut dz = d_top.clone();
        for (l, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let d_res2 = layer_norm_backward(&lc.res2, &lc.z, &dz);
            let mut dy = ffn_backward(&lc.y, &layer.ffn, &lc.pre, &d_res2, &mut grad.layers[l].ffn);
            dy.add_assign(&d_res2);
            let d_res1 = layer_norm_backward(&lc.res1, &lc.y, &dy);
            let mut dx = multi_head_backward(
                &lc.input,
                &layer.attention,
                &lc.attn,
                &d_res1,
                &mut grad.layers[l].attention,
            );
            dx.add_assign(&d_res1);
            dz = dx;
        }
        for (pos, &id) in cache.ids.iter().enumerate() {
            let g = dz.row(pos);
            grad.token_embedding
                .row_mut(id)
                .iter_mut()
                .zip(g)
                .for_each(|(a, b)| *a += b);
            grad.position_embedding
                .row_mut(pos)
                .iter_mut()
                .zip(g)
                .for_each(|(a, b)| *a += b);
        }
    }

    /// Output rows of every position at 1-based `layer`.
    pub fn layer_output(&self, ids: &[usize], layer: usize) -> Result<Matrix> {
        self.check_layer(layer)?;
        let mut cache = self.forward(ids)?;
        Ok(cache.layers.swap_remove(layer - 1).z)
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} outside 1..={}",
                self.layers.len()
            )));
        }
        Ok(())
    }
}

impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.token_embedding.data(), self.position_embedding.data()];
        for l in &self.layers {
            let a = &l.attention;
            out.extend([a.wq.data(), a.wk.data(), a.wv.data(), a.wo.data()]);
            out.extend([l.ffn.w1.data(), &l.ffn.b1[..], l.ffn.w2.data(), &l.ffn.b2[..]]);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.token_embedding.data_mut(), self.position_embedding.data_mut()];
        for l in &mut self.layers {
            let a = &mut l.attention;
            out.extend([a.wq.data_mut(), a.wk.data_mut(), a.wv.data_mut(), a.wo.data_mut()]);
            let f = &mut l.ffn;
            out.extend([f.w1.data_mut(), &mut f.b1[..], f.w2.data_mut(), &mut f.b2[..]]);
        }
        out
    }
}

pub(crate) struct LayerCache {
    input: Matrix,
    attn: AttentionCache,
    res1: Matrix,
    y: Matrix,
    pre: Matrix,
    res2: Matrix,
    z: Matrix,
}

pub(crate) struct ForwardCache {
    ids: Vec<usize>,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn top(&self) -> &Matrix {
        &self.layers.last().expect("at least one layer").z
    }
}

/// Per-terminal hidden vectors of `sample` at 1-based `layer`.
///
/// Terminals are the encoder's tokens, so each terminal row is the mean over
/// the single position covering its span. Samples longer than
/// [`MAX_TERMINALS`] are rejected.
pub fn encode(sample: &Sample, params: &EncoderParams, layer: usize) -> Result<HiddenMatrix> {
    let ast = parse_source(&sample.code, &sample.lang)?;
    let terminals = ast.terminals();
    encode_terminals(&sample.id, &sample.code, &terminals, params, layer)
}

pub(crate) fn encode_terminals(
    id: &str,
    code: &str,
    terminals: &[Terminal],
    params: &EncoderParams,
    layer: usize,
) -> Result<HiddenMatrix> {
    if terminals.len() > MAX_TERMINALS {
        return Err(Error::Alignment(format!(
            "`{id}` has {} terminals, more than the {MAX_TERMINALS} a sequence holds",
            terminals.len()
        )));
    }
    let ids = params.token_ids(&terminal_texts(code, terminals));
    let out = params.layer_output(&ids, layer)?;
    let n = terminals.len();
    let mut rows = Matrix::zeros(n, out.cols());
    for r in 0..n {
        rows.row_mut(r).copy_from_slice(out.row(r + 1));
    }
    let spans: Vec<_> = terminals.iter().map(|t| t.span).collect();
    let pooled = pool_by_spans(&rows, &spans, terminals)?;
    HiddenMatrix::new(id, layer, super::BUILTIN_MODEL, pooled, spans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> EncoderParams {
        let vocab = Vocab::build(["x", "=", "1", "y", "+", "(", ")"]);
        let shape = EncoderShape {
            width: 8,
            heads: 2,
            layers: 2,
            ffn_width: 12,
        };
        EncoderParams::random(vocab, shape, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn sample(code: &str) -> Sample {
        Sample {
            id: "t".into(),
            code: code.into(),
            label: crate::Label::Clean,
            hallucinated_lines: Default::default(),
            lang: "python".into(),
            taxonomy_tag: None,
        }
    }

    #[test]
    fn vocab_puts_sentinels_first_and_maps_unknowns() {
        let v = Vocab::build(["b", "a", "b"]);
        assert_eq!(v.tokens(), [PAD, UNK, CLS, SEP, "a", "b"]);
        assert_eq!(v.id("zzz"), 1);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }

    #[test]
    fn single_terminal_gives_one_row() {
        let h = encode(&sample("x\n"), &model(1), 2).unwrap();
        assert_eq!((h.rows.rows(), h.rows.cols()), (1, 8));
    }

    #[test]
    fn encoding_is_deterministic_and_order_sensitive() {
        let p = model(2);
        let a = encode(&sample("x = y + 1\n"), &p, 2).unwrap();
        assert_eq!(a, encode(&sample("x = y + 1\n"), &p, 2).unwrap());
        let b = encode(&sample("y = x + 1\n"), &p, 2).unwrap();
        assert_ne!(a.rows, b.rows);
        assert!(encode(&sample("x\n"), &p, 3).is_err());
        assert!(encode(&sample("x\n"), &p, 0).is_err());
    }
}
