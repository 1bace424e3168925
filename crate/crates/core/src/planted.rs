//! Hidden states with a known syntactic subspace.
//!
//! Each terminal gets planted coordinates `s*` whose adjacent squared
//! distances equal the gold depths and whose pair midpoints and rows carry
//! the gold `c` and `u` labels along one axis per label. Hidden rows are
//! `B* s*` for an orthonormal `B*`, plus a class offset along a direction
//! orthogonal to `B*` and Gaussian noise projected off the subspace.
//! [`PlantedSpace::probe`] is the exact probe for the construction.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LineIndex, Sample};
use crate::encoder::HiddenMatrix;
use crate::linalg::{dot, orthonormal_columns, Matrix};
use crate::probe::{LabelVocab, PairFeature, ProbeParams};
use crate::syntax::{binarize, encode_tuple, parse_source, AstNode, Span, TupleEncoding, EMPTY_LABEL, NIL_LABEL};
use crate::{Error, Result};

/// Model identifier recorded for planted hidden states.
pub const PLANTED_MODEL: &str = "planted";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    /// Dimensions beyond the planted subspace and the class direction.
    pub extra_width: usize,
    /// Standard deviation of the off-subspace noise.
    pub noise: f64,
    /// Offset along the class direction, `+` for hallucinated, `-` for clean.
    pub class_offset: f64,
    /// Largest share of `d_i` taken by the label-block step between rows `i`
    /// and `i + 1`.
    pub label_budget: f64,
    pub pair_feature: PairFeature,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            extra_width: 32,
            noise: 0.0,
            class_offset: 1.0,
            label_budget: 0.9,
            pair_feature: PairFeature::Midpoint,
        }
    }
}

/// Parsed tree and gold tuple of a sample.
pub fn gold_tuple(sample: &Sample) -> Result<(AstNode, TupleEncoding)> {
    let ast = parse_source(&sample.code, &sample.lang)?;
    let t = encode_tuple(&binarize(&ast)?);
    Ok((ast, t))
}

/// Leaf range `[lo, hi)` under the node where terminals `i` and `i + 1` meet.
fn pair_range(d: &[f64], i: usize) -> (usize, usize) {
    let lo = (0..i).rev().find(|&p| d[p] < d[i]).map_or(0, |p| p + 1);
    let hi = (i + 1..d.len()).find(|&q| d[q] < d[i]).map_or(d.len() + 1, |q| q + 1);
    (lo, hi)
}

/// Keeps only the structure lying on `lines`: pair labels of non-root nodes
/// that reach any other line become `<nil>`, and unary chains of terminals
/// starting on other lines become `<empty>`.
pub fn restrict_to_lines(
    t: &TupleEncoding,
    spans: &[Span],
    index: &LineIndex,
    lines: &BTreeSet<usize>,
) -> Result<TupleEncoding> {
    t.validate()?;
    if spans.len() != t.n() {
        return Err(Error::Alignment(format!(
            "{} spans for a tuple over {} terminals",
            spans.len(),
            t.n()
        )));
    }
    let root_depth = t.d.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = t.clone();
    for i in 0..t.d.len() {
        if t.d[i] == root_depth {
            continue;
        }
        let (lo, hi) = pair_range(&t.d, i);
        let first = index.line_of(spans[lo].start)?;
        let last = index.line_of(spans[hi - 1].end.saturating_sub(1).max(spans[hi - 1].start))?;
        if !(first..=last).all(|l| lines.contains(&l)) {
            out.c[i] = NIL_LABEL.to_string();
        }
    }
    for (j, span) in spans.iter().enumerate() {
        if !lines.contains(&index.line_of(span.start)?) {
            out.u[j] = EMPTY_LABEL.to_string();
        }
    }
    Ok(out)
}

/// Orthonormal basis and label axes of a planted construction.
#[derive(Debug, Clone)]
pub struct PlantedSpace {
    /// `D x m`: columns `0..m-1` span the syntactic subspace, the last is the
    /// class direction.
    basis: Matrix,
    c_vocab: LabelVocab,
    u_vocab: LabelVocab,
    config: PlantedConfig,
}

impl PlantedSpace {
    /// Builds the space over the label vocabularies of `tuples`.
    pub fn new<'a>(
        tuples: impl IntoIterator<Item = &'a TupleEncoding> + Clone,
        config: PlantedConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if !(config.label_budget > 0.0 && config.label_budget < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "label budget {} outside (0, 1)",
                config.label_budget
            )));
        }
        if config.noise.is_nan() || config.noise < 0.0 {
            return Err(Error::InvalidArgument(format!("noise {} is negative", config.noise)));
        }
        let c_vocab = LabelVocab::build(
            NIL_LABEL,
            tuples.clone().into_iter().flat_map(|t| t.c.iter().map(String::as_str)),
        );
        let u_vocab = LabelVocab::build(
            EMPTY_LABEL,
            tuples.into_iter().flat_map(|t| t.u.iter().map(String::as_str)),
        );
        let m = 2 + c_vocab.len() + u_vocab.len() + 1;
        let width = m + config.extra_width;
        let basis = orthonormal_columns(&Matrix::random_normal(width, m, 1.0, rng))?;
        Ok(Self {
            basis,
            c_vocab,
            u_vocab,
            config,
        })
    }

    pub fn width(&self) -> usize {
        self.basis.rows()
    }

    /// Dimension of the syntactic subspace.
    pub fn subspace_dim(&self) -> usize {
        self.basis.cols() - 1
    }

    fn c_offset(&self) -> usize {
        2
    }

    fn u_offset(&self) -> usize {
        2 + self.c_vocab.len()
    }

    /// Planted coordinates `s*` (`n x m`) of a gold tuple.
    pub fn coordinates(&self, t: &TupleEncoding, rng: &mut ChaCha8Rng) -> Result<Matrix> {
        t.validate()?;
        let n = t.n();
        let (nc, nu) = (self.c_vocab.len(), self.u_vocab.len());
        let mut g = vec![vec![0.0f64; nc]; n];
        if let (PairFeature::Midpoint, Some(first)) = (self.config.pair_feature, t.c.first()) {
            let y = self.c_vocab.id(first);
            g[0] = (0..nc).map(|l| if l == y { 0.5 } else { -0.5 }).collect();
        }
        for i in 0..n - 1 {
            let y = self.c_vocab.id(&t.c[i]);
            match self.config.pair_feature {
                PairFeature::Midpoint => {
                    // pair midpoints are >= 1/2 on the gold axis and <= -1/2
                    // elsewhere, with the smallest magnitudes that allow it
                    g[i + 1] = g[i]
                        .iter()
                        .enumerate()
                        .map(|(l, v)| {
                            if l == y {
                                (1.0 - v).max(0.5)
                            } else {
                                (-1.0 - v).min(-0.5)
                            }
                        })
                        .collect();
                }
                PairFeature::Difference => {
                    g[i + 1] = g[i].clone();
                    g[i + 1][y] += 1.0;
                }
            }
        }
        let mut u = vec![vec![0.0; nu]; n];
        for (j, row) in u.iter_mut().enumerate() {
            row[self.u_vocab.id(&t.u[j])] = 1.0;
        }
        let label_step = |i: usize| -> f64 {
            let dg: f64 = g[i].iter().zip(&g[i + 1]).map(|(a, b)| (a - b) * (a - b)).sum();
            let du: f64 = u[i].iter().zip(&u[i + 1]).map(|(a, b)| (a - b) * (a - b)).sum();
            dg + du
        };
        if t.d.iter().any(|d| d.is_nan() || *d <= 0.0) {
            return Err(Error::InvalidArgument("planted depths must be positive".into()));
        }
        // largest scale keeping every label step within its share of d_i
        let alpha = (0..n - 1)
            .map(|i| {
                let step = label_step(i);
                if step > 0.0 {
                    (self.config.label_budget * t.d[i] / step).sqrt()
                } else {
                    f64::INFINITY
                }
            })
            .fold(1.0, f64::min);

        let mut s = Matrix::zeros(n, self.subspace_dim());
        let mut p = [0.0f64; 2];
        for j in 0..n {
            if j > 0 {
                let r = (t.d[j - 1] - alpha * alpha * label_step(j - 1)).max(0.0).sqrt();
                let toward = if p == [0.0, 0.0] {
                    rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)
                } else {
                    (-p[1]).atan2(-p[0])
                };
                let theta = toward + rng.gen_range(-1.0..1.0);
                p = [p[0] + r * theta.cos(), p[1] + r * theta.sin()];
            }
            let row = s.row_mut(j);
            row[..2].copy_from_slice(&p);
            for (dst, v) in row[self.c_offset()..self.c_offset() + nc].iter_mut().zip(&g[j]) {
                *dst = alpha * v;
            }
            for (dst, v) in row[self.u_offset()..self.u_offset() + nu].iter_mut().zip(&u[j]) {
                *dst = alpha * v;
            }
        }
        Ok(s)
    }

    /// Hidden rows for a tuple: `B* s*`, the class offset, and projected noise.
    pub fn hidden(
        &self,
        sample_id: &str,
        t: &TupleEncoding,
        spans: &[Span],
        label: Label,
        rng: &mut ChaCha8Rng,
    ) -> Result<HiddenMatrix> {
        let s = self.coordinates(t, rng)?;
        let m = self.subspace_dim();
        let sub = self.basis.col_block(0, m);
        let class_dir: Vec<f64> = (0..self.width()).map(|r| self.basis.get(r, m)).collect();
        let sign = if label.is_hallucinated() { 1.0 } else { -1.0 };
        let mut rows = s.matmul_t(&sub);
        let normal = Normal::new(0.0, self.config.noise.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for j in 0..rows.rows() {
            let mut noise: Vec<f64> = if self.config.noise > 0.0 {
                (0..self.width()).map(|_| normal.sample(rng)).collect()
            } else {
                vec![0.0; self.width()]
            };
            for c in 0..m {
                let b: Vec<f64> = (0..self.width()).map(|r| sub.get(r, c)).collect();
                let proj = dot(&noise, &b);
                noise.iter_mut().zip(&b).for_each(|(x, y)| *x -= proj * y);
            }
            for (r, v) in rows.row_mut(j).iter_mut().enumerate() {
                *v += noise[r] + sign * self.config.class_offset * class_dir[r];
            }
        }
        HiddenMatrix::new(sample_id, 1, PLANTED_MODEL, rows, spans.to_vec())
    }

    /// The probe that reads the construction back exactly.
    pub fn probe(&self) -> ProbeParams {
        let m = self.subspace_dim();
        let mut c = Matrix::zeros(self.c_vocab.len(), m);
        for l in 0..self.c_vocab.len() {
            c.set(l, self.c_offset() + l, 1.0);
        }
        let mut u = Matrix::zeros(self.u_vocab.len(), m);
        for l in 0..self.u_vocab.len() {
            u.set(l, self.u_offset() + l, 1.0);
        }
        ProbeParams {
            b: self.basis.col_block(0, m),
            c,
            u,
            c_vocab: self.c_vocab.clone(),
            u_vocab: self.u_vocab.clone(),
            pair_feature: self.config.pair_feature,
        }
    }
}

/// One sample of a planted corpus.
#[derive(Debug, Clone)]
pub struct PlantedItem {
    pub sample_id: String,
    pub label: Label,
    /// Full gold tuple of the sample's tree.
    pub gold: TupleEncoding,
    /// Tuple the hidden rows encode; equals `gold` unless restricted.
    pub encoded: TupleEncoding,
    pub hidden: HiddenMatrix,
}

/// Planted hidden states for `samples`. Samples whose ids are in `restrict`
/// and which are hallucinated encode only the structure on their
/// hallucinated lines.
pub fn plant_corpus(
    samples: &[Sample],
    restrict: &BTreeSet<String>,
    config: PlantedConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(PlantedSpace, Vec<PlantedItem>)> {
    let parsed = samples.iter().map(gold_tuple).collect::<Result<Vec<_>>>()?;
    let space = PlantedSpace::new(parsed.iter().map(|(_, t)| t), config, rng)?;
    let mut items = Vec::with_capacity(samples.len());
    for (sample, (ast, gold)) in samples.iter().zip(parsed) {
        let spans: Vec<Span> = ast.terminals().iter().map(|t| t.span).collect();
        let encoded = if sample.label.is_hallucinated() && restrict.contains(&sample.id) {
            let index = LineIndex::new(&sample.code);
            restrict_to_lines(&gold, &spans, &index, &sample.hallucinated_lines)?
        } else {
            gold.clone()
        };
        let hidden = space.hidden(&sample.id, &encoded, &spans, sample.label, rng)?;
        items.push(PlantedItem {
            sample_id: sample.id.clone(),
            label: sample.label,
            gold,
            encoded,
            hidden,
        });
    }
    Ok((space, items))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic;
    use crate::probe::{predict_tuple, tree_match};
    use rand::SeedableRng;

    fn check_exact(pair_feature: PairFeature, noise: f64) {
        let samples = generate_synthetic(5, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let config = PlantedConfig {
            noise,
            pair_feature,
            ..PlantedConfig::default()
        };
        let (space, items) = plant_corpus(&samples, &BTreeSet::new(), config, &mut rng).unwrap();
        let probe = space.probe();
        for item in &items {
            let pred = predict_tuple(&item.hidden, &probe).unwrap();
            assert_eq!(pred.c, item.gold.c, "{}", item.sample_id);
            assert_eq!(pred.u, item.gold.u, "{}", item.sample_id);
            for (a, b) in pred.d.iter().zip(&item.gold.d) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            assert!(tree_match(&pred, &item.gold, &item.hidden.spans));
        }
    }

    #[test]
    fn planted_probe_reads_back_the_gold_tuple() {
        check_exact(PairFeature::Midpoint, 0.0);
        check_exact(PairFeature::Difference, 0.0);
    }

    #[test]
    fn off_subspace_noise_does_not_move_the_projection() {
        check_exact(PairFeature::Midpoint, 0.5);
    }

    #[test]
    fn pair_ranges_follow_depths() {
        // ((w1 w2) w3) w4 with depths 3, 2, 1
        let d = [3.0, 2.0, 1.0];
        assert_eq!(pair_range(&d, 0), (0, 2));
        assert_eq!(pair_range(&d, 1), (0, 3));
        assert_eq!(pair_range(&d, 2), (0, 4));
        let d = [2.0, 1.0, 2.0];
        assert_eq!(pair_range(&d, 2), (2, 4));
    }

    #[test]
    fn restriction_keeps_structure_on_the_chosen_lines() {
        let code = "def f(a):\n    return a + 1\n";
        let ast = parse_source(code, "python").unwrap();
        let t = encode_tuple(&binarize(&ast).unwrap());
        let spans: Vec<Span> = ast.terminals().iter().map(|t| t.span).collect();
        let index = LineIndex::new(code);
        let all: BTreeSet<usize> = [1, 2].into();
        assert_eq!(restrict_to_lines(&t, &spans, &index, &all).unwrap(), t);
        let r = restrict_to_lines(&t, &spans, &index, &[2].into()).unwrap();
        let kept: Vec<&String> = r.c.iter().filter(|c| *c != NIL_LABEL).collect();
        assert!(kept.iter().any(|c| c.contains("binary_operator")), "{:?}", r.c);
        for (j, s) in spans.iter().enumerate() {
            if index.line_of(s.start).unwrap() == 1 {
                assert_eq!(r.u[j], EMPTY_LABEL);
            }
        }
    }
}
