//! Shared inputs for the pipeline benchmarks.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cohallo_core::corpus::{generate_synthetic, Sample};
use cohallo_core::encoder::{ClassifierHead, EncoderClassifier, EncoderParams, EncoderShape, Vocab};
use cohallo_core::localize::rank_lines;
use cohallo_core::metrics::EvalCase;
use cohallo_core::planted::{plant_corpus, PlantedConfig, PlantedItem};
use cohallo_core::syntax::{binarize, parse_source};
use cohallo_core::{AstNode, BinaryNode, ProbeParams, TupleEncoding};

pub struct Fixture {
    pub samples: Vec<Sample>,
    pub asts: Vec<AstNode>,
    pub binary: Vec<BinaryNode>,
    pub tuples: Vec<TupleEncoding>,
    pub planted: Vec<PlantedItem>,
    pub probe: ProbeParams,
    pub model: EncoderClassifier,
    pub cases: Vec<EvalCase>,
}

impl Fixture {
    /// `count` generated samples with parsed, binarized and planted forms.
    pub fn new(count: usize) -> Self {
        let samples = generate_synthetic(42, count).expect("generator");
        let asts: Vec<AstNode> = samples
            .iter()
            .map(|s| parse_source(&s.code, &s.lang).expect("generated code parses"))
            .collect();
        let binary: Vec<BinaryNode> = asts.iter().map(|a| binarize(a).expect("non-empty tree")).collect();
        let tuples = binary.iter().map(cohallo_core::syntax::encode_tuple).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (space, planted) =
            plant_corpus(&samples, &BTreeSet::new(), PlantedConfig::default(), &mut rng).expect("planted corpus");
        let probe = space.probe();
        let texts: Vec<String> = asts
            .iter()
            .zip(&samples)
            .flat_map(|(a, s)| {
                a.terminals()
                    .into_iter()
                    .map(|t| s.code[t.span.start..t.span.end].to_string())
            })
            .collect();
        let vocab = Vocab::build(texts.iter().map(String::as_str));
        let shape = EncoderShape::default();
        let model = EncoderClassifier {
            encoder: EncoderParams::random(vocab, shape, &mut rng).expect("valid shape"),
            head: ClassifierHead::random(shape.width, 0.0, &mut rng),
        };
        let cases = samples
            .iter()
            .filter(|s| s.label.is_hallucinated())
            .map(|s| {
                let n = s.line_count();
                let scores: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64).collect();
                EvalCase {
                    sample_id: s.id.clone(),
                    gold_lines: s.hallucinated_lines.clone(),
                    total_lines: n,
                    ranking: Some(rank_lines(&scores).expect("finite scores")),
                }
            })
            .collect();
        Self {
            samples,
            asts,
            binary,
            tuples,
            planted,
            probe,
            model,
            cases,
        }
    }
}
