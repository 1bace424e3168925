use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cohallo_core::encoder::{
    attention_weights, ClassifierHead, EncoderClassifier, EncoderParams, EncoderShape, HiddenMatrix, Vocab,
};
use cohallo_core::linalg::{softmax, Matrix};
use cohallo_core::optim::Parameters;
use cohallo_core::probe::{probe_loss, probe_loss_and_gradient, PairFeature, ProbeParams};
use cohallo_core::syntax::{Span, TupleEncoding};
use cohallo_core::Label;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

/// Relative error `|a - n| / max(|a|, |n|)` of each tensor's norm, with
/// analytic gradient `a` and central differences `n`.
fn check<P: Parameters + Clone>(params: &P, analytic: &P, loss: impl Fn(&P) -> f64) {
    let mut probe = params.clone();
    for (t, grad) in analytic.tensors().iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.tensors()[t][i];
            probe.tensors_mut()[t][i] = orig + H;
            let up = loss(&probe);
            probe.tensors_mut()[t][i] = orig - H;
            let down = loss(&probe);
            probe.tensors_mut()[t][i] = orig;
            *slot = (up - down) / (2.0 * H);
        }
        let diff: f64 = grad
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = grad
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        if scale == 0.0 {
            continue;
        }
        assert!(diff / scale <= TOL, "tensor {t}: relative error {}", diff / scale);
    }
}

fn small_detector(seed: u64) -> EncoderClassifier {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = Vocab::build(["def", "f", "(", ")", ":", "return", "x", "+", "1"]);
    let shape = EncoderShape {
        width: 8,
        heads: 2,
        layers: 2,
        ffn_width: 16,
    };
    EncoderClassifier {
        encoder: EncoderParams::random(vocab, shape, &mut rng).unwrap(),
        head: ClassifierHead::random(8, 0.0, &mut rng),
    }
}

#[test]
fn detector_gradient_matches_finite_differences() {
    for (seed, terminals) in [(1u64, 1usize), (2, 4), (3, 6)] {
        let model = small_detector(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 10);
        let texts: Vec<&str> = (0..terminals)
            .map(|_| ["def", "f", "x", "+", "1", "return"][rng.gen_range(0..6)])
            .collect();
        let ids = model.encoder.token_ids(&texts);
        for label in [Label::Clean, Label::Hallucinated] {
            let (_, grad) = model.loss_and_gradient(&ids, label).unwrap();
            check(&model, &grad, |m| m.loss(&ids, label).unwrap());
        }
    }
}

fn probe_case(seed: u64, feature: PairFeature) -> (ProbeParams, HiddenMatrix, TupleEncoding) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gold = TupleEncoding {
        d: vec![3.0, 2.0, 3.0, 1.0, 2.0],
        c: ["A", "<nil>", "B", "if_statement", "zzz"].map(String::from).to_vec(),
        u: ["<empty>", "x", "<empty>", "y|z", "x", "q"].map(String::from).to_vec(),
    };
    let params = ProbeParams::init(8, 4, [&gold], feature, &mut rng);
    let rows = Matrix::random_normal(6, 8, 1.0, &mut rng);
    let spans = (0..6).map(|i| Span::new(i, i + 1)).collect();
    let hidden = HiddenMatrix::new("g", 1, "m", rows, spans).unwrap();
    (params, hidden, gold)
}

#[test]
fn probe_gradient_matches_finite_differences() {
    for feature in [PairFeature::Midpoint, PairFeature::Difference] {
        for seed in 0..4 {
            let (params, hidden, gold) = probe_case(seed, feature);
            let (_, grad) = probe_loss_and_gradient(&hidden, &gold, &params).unwrap();
            check(&params, &grad, |p| probe_loss(&hidden, &gold, p).unwrap().total());
        }
    }
}

#[test]
fn softmax_and_attention_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let len = rng.gen_range(1..20);
        let logits: Vec<f64> = (0..len).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let p = softmax(&logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        assert!(p.iter().all(|v| *v >= 0.0));
    }
    for _ in 0..50 {
        let n = rng.gen_range(1..10);
        let q = Matrix::random_normal(n, 4, 3.0, &mut rng);
        let k = Matrix::random_normal(n, 4, 3.0, &mut rng);
        let a = attention_weights(&q, &k, 4).unwrap();
        for r in 0..n {
            assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
}
