//! Labeled code samples: loading, validation, splitting and synthesis.

mod lines;
mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use lines::LineIndex;
pub use synth::{generate_synthetic, MutationKind};

use crate::syntax::parse_source;
use crate::{Error, Result};

pub const DEFAULT_LANG: &str = "python";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Clean,
    Hallucinated,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Clean),
            1 => Some(Label::Hallucinated),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Label::Clean => 0,
            Label::Hallucinated => 1,
        }
    }

    pub fn is_hallucinated(self) -> bool {
        self == Label::Hallucinated
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_u8(v).ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

/// One code unit with its gold annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub code: String,
    pub label: Label,
    /// 1-based line numbers.
    pub hallucinated_lines: BTreeSet<usize>,
    pub lang: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy_tag: Option<String>,
}

impl Sample {
    pub fn line_count(&self) -> usize {
        LineIndex::new(&self.code).line_count()
    }

    /// Checks label/line consistency and that the code parses.
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidSample {
            id: self.id.clone(),
            reason,
        };
        match (self.label, self.hallucinated_lines.is_empty()) {
            (Label::Hallucinated, true) => return Err(invalid("label is 1 but hallucinated_lines is empty".into())),
            (Label::Clean, false) => return Err(invalid("label is 0 but hallucinated_lines is not empty".into())),
            _ => {}
        }
        let lines = self.line_count();
        if let Some(&bad) = self.hallucinated_lines.iter().find(|&&l| l == 0 || l > lines) {
            return Err(invalid(format!("hallucinated line {bad} is outside 1..={lines}")));
        }
        parse_source(&self.code, &self.lang).map_err(|e| invalid(format!("does not parse: {e}")))?;
        Ok(())
    }
}

/// Reads a corpus file with one JSON record per line and validates every
/// sample. Blank lines are ignored; record indices count non-blank lines.
pub fn load_corpus(path: &Path) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path)?;
    parse_corpus(&text)
}

pub fn parse_corpus(text: &str) -> Result<Vec<Sample>> {
    let samples = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(index, line)| parse_record(index, line))
        .collect::<Result<Vec<_>>>()?;
    samples.par_iter().try_for_each(Sample::validate)?;
    Ok(samples)
}

fn parse_record(index: usize, line: &str) -> Result<Sample> {
    let err = |field: &'static str, reason: String| Error::Record { index, field, reason };
    let value: Value = serde_json::from_str(line).map_err(|e| err("<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| err("<record>", "not a key-value object".into()))?;
    let string = |field: &'static str| -> Result<String> {
        obj.get(field)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| err(field, "missing or not a string".into()))
    };
    let id = string("id")?;
    let code = string("code")?;
    let label = obj
        .get("label")
        .and_then(Value::as_u64)
        .and_then(|v| u8::try_from(v).ok())
        .and_then(Label::from_u8)
        .ok_or_else(|| err("label", "must be 0 or 1".into()))?;
    let hallucinated_lines = obj
        .get("hallucinated_lines")
        .and_then(Value::as_array)
        .ok_or_else(|| err("hallucinated_lines", "missing or not an array".into()))?
        .iter()
        .map(|v| {
            v.as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| err("hallucinated_lines", format!("{v} is not a line number")))
        })
        .collect::<Result<BTreeSet<_>>>()?;
    let lang = match obj.get("lang") {
        None | Some(Value::Null) => DEFAULT_LANG.to_string(),
        Some(_) => string("lang")?,
    };
    let taxonomy_tag = match obj.get("taxonomy_tag") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(err("taxonomy_tag", "not a string".into())),
    };
    Ok(Sample {
        id,
        code,
        label,
        hallucinated_lines,
        lang,
        taxonomy_tag,
    })
}

/// Serializes samples in the one-record-per-line format.
pub fn corpus_to_string(samples: &[Sample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_corpus(samples: &[Sample], path: &Path) -> Result<()> {
    crate::io::atomic_write(path, corpus_to_string(samples)?.as_bytes())
}

/// Disjoint train / validation / test partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Sample ids of each partition, as stored next to the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl CorpusSplit {
    pub fn ids(&self) -> SplitIds {
        let ids = |v: &[Sample]| v.iter().map(|s| s.id.clone()).collect();
        SplitIds {
            train: ids(&self.train),
            valid: ids(&self.valid),
            test: ids(&self.test),
        }
    }

    /// Rebuilds a split from stored ids.
    pub fn from_ids(samples: &[Sample], ids: &SplitIds) -> Result<Self> {
        let by_id: std::collections::HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
        let pick = |list: &[String]| -> Result<Vec<Sample>> {
            list.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|s| (*s).clone())
                        .ok_or_else(|| Error::InvalidArgument(format!("split references unknown sample `{id}`")))
                })
                .collect()
        };
        Ok(Self {
            train: pick(&ids.train)?,
            valid: pick(&ids.valid)?,
            test: pick(&ids.test)?,
        })
    }
}

/// Shuffles with `seed` and cuts 8:1:1; the rounding remainder goes to
/// train. Each partition keeps the input order of its samples.
pub fn split_corpus(samples: &[Sample], seed: u64) -> Result<CorpusSplit> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::TooFewSamples(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = n / 10;
    let mut valid_idx = order[..held].to_vec();
    let mut test_idx = order[held..2 * held].to_vec();
    let mut train_idx = order[2 * held..].to_vec();
    for v in [&mut train_idx, &mut valid_idx, &mut test_idx] {
        v.sort_unstable();
    }
    let take = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok(CorpusSplit {
        train: take(&train_idx),
        valid: take(&valid_idx),
        test: take(&test_idx),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(i: usize) -> Sample {
        Sample {
            id: format!("s{i}"),
            code: "x = 1\n".into(),
            label: Label::Clean,
            hallucinated_lines: BTreeSet::new(),
            lang: DEFAULT_LANG.into(),
            taxonomy_tag: None,
        }
    }

    #[test]
    fn minimal_clean_record() {
        let s = parse_corpus(r#"{"id":"s1","code":"x = 1\n","label":0,"hallucinated_lines":[]}"#).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].line_count(), 1);
        assert_eq!(s[0].lang, "python");
    }

    #[test]
    fn hallucinated_without_lines_is_rejected() {
        let err = parse_corpus(r#"{"id":"s1","code":"x = 1\n","label":1,"hallucinated_lines":[]}"#).unwrap_err();
        assert!(matches!(err, Error::InvalidSample { .. }), "{err}");
    }

    #[test]
    fn gold_line_within_code() {
        let s = parse_corpus(
            r#"{"id":"s1","code":"a=1\nb=c\n","label":1,"hallucinated_lines":[2],"taxonomy_tag":"naming"}"#,
        )
        .unwrap();
        // line-count oracle: two newline-terminated lines
        assert_eq!("a=1\nb=c\n".matches('\n').count(), 2);
        assert_eq!(s[0].hallucinated_lines, BTreeSet::from([2]));
        assert_eq!(s[0].taxonomy_tag.as_deref(), Some("naming"));

        let err = parse_corpus(r#"{"id":"s1","code":"a=1\n","label":1,"hallucinated_lines":[3]}"#).unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
    }

    #[test]
    fn malformed_record_names_index_and_field() {
        let text = "{\"id\":\"a\",\"code\":\"x=1\\n\",\"label\":0,\"hallucinated_lines\":[]}\n{\"id\":\"b\",\"code\":\"x=1\\n\",\"label\":\"yes\",\"hallucinated_lines\":[]}\n";
        match parse_corpus(text).unwrap_err() {
            Error::Record { index, field, .. } => {
                assert_eq!(index, 1);
                assert_eq!(field, "label");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unparseable_code_is_rejected() {
        let err = parse_corpus(r#"{"id":"s1","code":"def f(:\n","label":0,"hallucinated_lines":[]}"#).unwrap_err();
        assert!(err.to_string().contains("does not parse"), "{err}");
    }

    #[test]
    fn records_roundtrip_through_text() {
        let mut s = sample(3);
        s.code = "a = 1\nb = \"q\\n\"\n".into();
        s.label = Label::Hallucinated;
        s.hallucinated_lines = BTreeSet::from([2]);
        let text = corpus_to_string(&[s.clone()]).unwrap();
        assert_eq!(parse_corpus(&text).unwrap(), vec![s]);
    }

    #[test]
    fn split_sizes() {
        let ten: Vec<_> = (0..10).map(sample).collect();
        let s = split_corpus(&ten, 7).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split_corpus(&ten, 7).unwrap());

        let hundred: Vec<_> = (0..100).map(sample).collect();
        let s = split_corpus(&hundred, 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));

        assert!(matches!(split_corpus(&ten[..9], 0), Err(Error::TooFewSamples(9))));
    }

    #[test]
    fn split_ids_roundtrip() {
        let all: Vec<_> = (0..23).map(sample).collect();
        let s = split_corpus(&all, 5).unwrap();
        assert_eq!(CorpusSplit::from_ids(&all, &s.ids()).unwrap(), s);
    }

    proptest! {
        #[test]
        fn split_is_a_disjoint_exhaustive_partition(n in 10usize..300, seed in any::<u64>()) {
            let all: Vec<_> = (0..n).map(sample).collect();
            let s = split_corpus(&all, seed).unwrap();
            let mut ids: Vec<String> = s.train.iter().chain(&s.valid).chain(&s.test).map(|x| x.id.clone()).collect();
            prop_assert_eq!(ids.len(), n);
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
            prop_assert_eq!(s.valid.len(), n / 10);
            prop_assert_eq!(s.test.len(), n / 10);
            prop_assert!(s.train.len().abs_diff(n * 8 / 10) <= 1 + n % 10);
        }
    }
}
