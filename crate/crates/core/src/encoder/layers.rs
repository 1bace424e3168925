use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{softmax, Matrix};
use crate::{Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Multi-head attention weights for one layer.
///
/// `wq`, `wk` and `wv` are `D x D`; column block `i` of width `d_k` is head
/// `i`'s projection. `wo` maps the concatenated heads back to width `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

impl MultiHeadAttention {
    pub fn new(width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "width {width} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            heads,
            wq: Matrix::zeros(width, width),
            wk: Matrix::zeros(width, width),
            wv: Matrix::zeros(width, width),
            wo: Matrix::zeros(width, width),
        })
    }

    pub fn random<R: Rng>(width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        let mut m = Self::new(width, heads)?;
        let scale = (1.0 / width as f64).sqrt();
        for w in [&mut m.wq, &mut m.wk, &mut m.wv, &mut m.wo] {
            *w = Matrix::random_normal(width, width, scale, rng);
        }
        Ok(m)
    }

    pub fn width(&self) -> usize {
        self.wq.rows()
    }

    pub fn d_k(&self) -> usize {
        self.width() / self.heads
    }
}

/// Position-wise `max(0, x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl FeedForward {
    pub fn zeros(width: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(width, hidden),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(hidden, width),
            b2: vec![0.0; width],
        }
    }

    pub fn random<R: Rng>(width: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w1: Matrix::random_normal(width, hidden, (2.0 / width as f64).sqrt(), rng),
            b1: vec![0.0; hidden],
            w2: Matrix::random_normal(hidden, width, (1.0 / hidden as f64).sqrt(), rng),
            b2: vec![0.0; width],
        }
    }
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Shape(what()))
    }
}

/// Row-wise `softmax(Q K^T / sqrt(d_k))`.
pub fn attention_weights(q: &Matrix, k: &Matrix, d_k: usize) -> Result<Matrix> {
    check(q.cols() == d_k && k.cols() == d_k, || {
        format!(
            "Q has {} and K has {} columns, expected d_k = {d_k}",
            q.cols(),
            k.cols()
        )
    })?;
    let mut scores = q.matmul_t(k);
    let scale = 1.0 / (d_k as f64).sqrt();
    for r in 0..scores.rows() {
        let row = scores.row_mut(r);
        row.iter_mut().for_each(|v| *v *= scale);
        let p = softmax(row);
        row.copy_from_slice(&p);
    }
    Ok(scores)
}

/// `softmax(Q K^T / sqrt(d_k)) V`.
pub fn scaled_attention(q: &Matrix, k: &Matrix, v: &Matrix, d_k: usize) -> Result<Matrix> {
    check(k.rows() == v.rows(), || {
        format!("K has {} rows but V has {}", k.rows(), v.rows())
    })?;
    Ok(attention_weights(q, k, d_k)?.matmul(v))
}

/// Concatenated head outputs projected by `W^O`.
pub fn multi_head(x: &Matrix, p: &MultiHeadAttention) -> Result<Matrix> {
    Ok(multi_head_cached(x, p)?.out)
}

pub(crate) struct AttentionCache {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub weights: Vec<Matrix>,
    pub concat: Matrix,
    pub out: Matrix,
}

pub(crate) fn multi_head_cached(x: &Matrix, p: &MultiHeadAttention) -> Result<AttentionCache> {
    check(x.cols() == p.width(), || {
        format!("input width {} does not match model width {}", x.cols(), p.width())
    })?;
    let dk = p.d_k();
    let q = x.matmul(&p.wq);
    let k = x.matmul(&p.wk);
    let v = x.matmul(&p.wv);
    let mut concat = Matrix::zeros(x.rows(), p.width());
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let a = attention_weights(&q.col_block(h * dk, dk), &k.col_block(h * dk, dk), dk)?;
        concat.set_col_block(h * dk, &a.matmul(&v.col_block(h * dk, dk)));
        weights.push(a);
    }
    let out = concat.matmul(&p.wo);
    Ok(AttentionCache {
        q,
        k,
        v,
        weights,
        concat,
        out,
    })
}

/// Gradient of multi-head attention; accumulates into `grad` and returns the
/// gradient with respect to `x`.
pub(crate) fn multi_head_backward(
    x: &Matrix,
    p: &MultiHeadAttention,
    cache: &AttentionCache,
    d_out: &Matrix,
    grad: &mut MultiHeadAttention,
) -> Matrix {
    let dk = p.d_k();
    let scale = 1.0 / (dk as f64).sqrt();
    grad.wo.add_assign(&cache.concat.t_matmul(d_out));
    let d_concat = d_out.matmul_t(&p.wo);
    let n = x.rows();
    let mut dq = Matrix::zeros(n, p.width());
    let mut dk_all = Matrix::zeros(n, p.width());
    let mut dv = Matrix::zeros(n, p.width());
    for h in 0..p.heads {
        let a = &cache.weights[h];
        let d_head = d_concat.col_block(h * dk, dk);
        let vh = cache.v.col_block(h * dk, dk);
        dv.set_col_block(h * dk, &a.t_matmul(&d_head));
        let da = d_head.matmul_t(&vh);
        let mut ds = Matrix::zeros(n, n);
        for r in 0..n {
            let (ar, dar) = (a.row(r), da.row(r));
            let inner: f64 = ar.iter().zip(dar).map(|(x, y)| x * y).sum();
            for c in 0..n {
                ds.set(r, c, ar[c] * (dar[c] - inner) * scale);
            }
        }
        dq.set_col_block(h * dk, &ds.matmul(&cache.k.col_block(h * dk, dk)));
        dk_all.set_col_block(h * dk, &ds.t_matmul(&cache.q.col_block(h * dk, dk)));
    }
    grad.wq.add_assign(&x.t_matmul(&dq));
    grad.wk.add_assign(&x.t_matmul(&dk_all));
    grad.wv.add_assign(&x.t_matmul(&dv));
    let mut dx = dq.matmul_t(&p.wq);
    dx.add_assign(&dk_all.matmul_t(&p.wk));
    dx.add_assign(&dv.matmul_t(&p.wv));
    dx
}

/// `max(0, X W1 + b1) W2 + b2`.
pub fn ffn(x: &Matrix, p: &FeedForward) -> Result<Matrix> {
    Ok(ffn_cached(x, p)?.1)
}

/// Returns the pre-activation alongside the output.
pub(crate) fn ffn_cached(x: &Matrix, p: &FeedForward) -> Result<(Matrix, Matrix)> {
    check(
        x.cols() == p.w1.rows() && p.b1.len() == p.w1.cols() && p.w2.rows() == p.w1.cols() && p.b2.len() == p.w2.cols(),
        || {
            format!(
                "input width {} with W1 {}x{}, b1 {}, W2 {}x{}, b2 {}",
                x.cols(),
                p.w1.rows(),
                p.w1.cols(),
                p.b1.len(),
                p.w2.rows(),
                p.w2.cols(),
                p.b2.len()
            )
        },
    )?;
    let mut pre = x.matmul(&p.w1);
    pre.add_row_vector(&p.b1);
    let mut act = pre.clone();
    act.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    let mut out = act.matmul(&p.w2);
    out.add_row_vector(&p.b2);
    Ok((pre, out))
}

pub(crate) fn ffn_backward(
    x: &Matrix,
    p: &FeedForward,
    pre: &Matrix,
    d_out: &Matrix,
    grad: &mut FeedForward,
) -> Matrix {
    let mut act = pre.clone();
    act.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    grad.w2.add_assign(&act.t_matmul(d_out));
    add_into(&mut grad.b2, &d_out.column_sums());
    let mut d_pre = d_out.matmul_t(&p.w2);
    for (d, z) in d_pre.data_mut().iter_mut().zip(pre.data()) {
        if *z <= 0.0 {
            *d = 0.0;
        }
    }
    grad.w1.add_assign(&x.t_matmul(&d_pre));
    add_into(&mut grad.b1, &d_pre.column_sums());
    d_pre.matmul_t(&p.w1)
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

/// Row-wise normalization to zero mean and unit variance.
pub fn layer_norm(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    out
}

/// Gradient of [`layer_norm`] given its input and output.
pub(crate) fn layer_norm_backward(x: &Matrix, y: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let (xr, yr, dyr) = (x.row(r), y.row(r), dy.row(r));
        let n = xr.len() as f64;
        let mean = xr.iter().sum::<f64>() / n;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        let mean_dy = dyr.iter().sum::<f64>() / n;
        let mean_dyy = dyr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = inv * (dyr[c] - mean_dy - yr[c] * mean_dyy);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_position_attends_to_itself() {
        let out = scaled_attention(&m(&[&[0.3]]), &m(&[&[-2.0]]), &m(&[&[7.0]]), 1).unwrap();
        assert_eq!(out, m(&[&[7.0]]));
    }

    #[test]
    fn identical_keys_average_values() {
        let q = m(&[&[1.0, 2.0], &[-1.0, 0.5]]);
        let k = m(&[&[0.4, 0.4], &[0.4, 0.4]]);
        let v = m(&[&[1.0, 3.0], &[5.0, -1.0]]);
        let out = scaled_attention(&q, &k, &v, 2).unwrap();
        for r in 0..2 {
            assert!((out.get(r, 0) - 3.0).abs() < 1e-12);
            assert!((out.get(r, 1) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_matches_scalar_computation() {
        let q = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let k = m(&[&[1.0, 1.0], &[0.0, 2.0]]);
        let v = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let out = scaled_attention(&q, &k, &v, 2).unwrap();
        let s = 2f64.sqrt();
        // row 0 scores (1, 0)/sqrt2; row 1 scores (1, 2)/sqrt2
        for (r, (s0, s1)) in [(1.0 / s, 0.0), (1.0 / s, 2.0 / s)].into_iter().enumerate() {
            let (e0, e1) = (f64::exp(s0), f64::exp(s1));
            let (p0, p1) = (e0 / (e0 + e1), e1 / (e0 + e1));
            assert!((out.get(r, 0) - (p0 * 1.0 + p1 * 3.0)).abs() < 1e-12);
            assert!((out.get(r, 1) - (p0 * 2.0 + p1 * 4.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Matrix::random_normal(7, 4, 3.0, &mut rng);
        let k = Matrix::random_normal(7, 4, 3.0, &mut rng);
        let a = attention_weights(&q, &k, 4).unwrap();
        for r in 0..7 {
            assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(a.row(r).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Matrix::zeros(2, 3);
        assert!(scaled_attention(&a, &a, &Matrix::zeros(3, 3), 3).is_err());
        assert!(attention_weights(&a, &a, 2).is_err());
        assert!(MultiHeadAttention::new(6, 4).is_err());
    }

    #[test]
    fn one_head_with_identity_output_is_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = MultiHeadAttention::random(4, 1, &mut rng).unwrap();
        p.wo = Matrix::identity(4);
        let x = Matrix::random_normal(3, 4, 1.0, &mut rng);
        let expected = scaled_attention(&x.matmul(&p.wq), &x.matmul(&p.wk), &x.matmul(&p.wv), 4).unwrap();
        assert_eq!(multi_head(&x, &p).unwrap(), expected);
    }

    #[test]
    fn two_heads_match_manual_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MultiHeadAttention::random(4, 2, &mut rng).unwrap();
        let x = Matrix::random_normal(3, 4, 1.0, &mut rng);
        let mut rows = vec![Vec::new(); 3];
        for h in 0..2 {
            let proj = |w: &Matrix| x.matmul(&w.col_block(2 * h, 2));
            let head = scaled_attention(&proj(&p.wq), &proj(&p.wk), &proj(&p.wv), 2).unwrap();
            for (r, row) in rows.iter_mut().enumerate() {
                row.extend_from_slice(head.row(r));
            }
        }
        let expected = Matrix::from_rows(&rows).unwrap().matmul(&p.wo);
        let got = multi_head(&x, &p).unwrap();
        for (a, b) in got.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let shape = multi_head(&Matrix::random_normal(5, 4, 1.0, &mut rng), &p).unwrap();
        assert_eq!((shape.rows(), shape.cols()), (5, 4));
    }

    #[test]
    fn feed_forward_cases() {
        let zero = FeedForward::zeros(3, 2);
        assert!(ffn(&Matrix::zeros(2, 3), &zero)
            .unwrap()
            .data()
            .iter()
            .all(|v| *v == 0.0));

        let mut clamp = FeedForward::zeros(2, 2);
        clamp.b1 = vec![-5.0, -5.0];
        clamp.w2 = Matrix::identity(2);
        clamp.b2 = vec![0.25, -0.5];
        let out = ffn(&m(&[&[1.0, 1.0]]), &clamp).unwrap();
        assert_eq!(out, m(&[&[0.25, -0.5]]));

        let p = FeedForward {
            w1: m(&[&[1.0, -1.0], &[0.5, 2.0], &[-1.0, 0.0]]),
            b1: vec![0.1, -0.2],
            w2: m(&[&[1.0, 0.0, 2.0], &[-1.0, 1.0, 0.5]]),
            b2: vec![0.0, 0.3, -0.3],
        };
        let x = m(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 0.0]]);
        let out = ffn(&x, &p).unwrap();
        for r in 0..2 {
            let h: Vec<f64> = (0..2)
                .map(|j| {
                    let z: f64 = (0..3).map(|i| x.get(r, i) * p.w1.get(i, j)).sum::<f64>() + p.b1[j];
                    z.max(0.0)
                })
                .collect();
            for c in 0..3 {
                let y = h[0] * p.w2.get(0, c) + h[1] * p.w2.get(1, c) + p.b2[c];
                assert!((out.get(r, c) - y).abs() < 1e-12);
            }
        }
        assert!(ffn(&Matrix::zeros(1, 2), &p).is_err());
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let y = layer_norm(&m(&[&[1.0, 2.0, 3.0, 6.0]]));
        let mean: f64 = y.row(0).iter().sum::<f64>() / 4.0;
        let var: f64 = y.row(0).iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
