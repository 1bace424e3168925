//! Predicted-tree reconstruction, structure matching, token scoring and line
//! ranking.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, LineIndex};
use crate::encoder::{DetectionResult, HiddenMatrix};
use crate::io::Fixed6;
use crate::probe::{predict_tuple, ProbeParams, UNK_LABEL};
use crate::syntax::{debinarize, decode_tuple, AstNode, BinaryLabel, BinaryNode, Span, Terminal};
use crate::{Error, Result};

/// Default roots whose matched structures earn [`CONTROL_WEIGHT`].
pub const CONTROL_FLOW_LABELS: [&str; 8] = [
    "if_statement",
    "elif_clause",
    "else_clause",
    "for_statement",
    "while_statement",
    "try_statement",
    "except_clause",
    "finally_clause",
];
pub const BASE_WEIGHT: f64 = 1.0;
pub const CONTROL_WEIGHT: f64 = 1.5;
/// Separates the root label from the preorder in a structure key.
pub const KEY_SEPARATOR: &str = " \u{2212} ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub control_flow: BTreeSet<String>,
    pub base_weight: f64,
    pub control_weight: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            control_flow: CONTROL_FLOW_LABELS.iter().map(|s| s.to_string()).collect(),
            base_weight: BASE_WEIGHT,
            control_weight: CONTROL_WEIGHT,
        }
    }
}

impl ScoringConfig {
    pub fn weight(&self, root: &str) -> f64 {
        if self.control_flow.contains(root) {
            self.control_weight
        } else {
            self.base_weight
        }
    }
}

/// A subtree rooted at a non-terminal, keyed by its root and preorder labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StructureRepr {
    pub key: String,
    pub root: String,
    /// Indices of the subtree's leaves in the tree's terminal order.
    pub tokens: Vec<usize>,
}

/// `root − l1 l2 ...` over the subtree's preorder labels.
pub fn structure_key(node: &AstNode) -> String {
    let labels: Vec<&str> = node.preorder().map(|n| n.label.as_str()).collect();
    format!("{}{KEY_SEPARATOR}{}", node.label, labels.join(" "))
}

/// One structure per non-terminal, in preorder. Duplicate keys are kept.
pub fn extract_structures(ast: &AstNode) -> Vec<StructureRepr> {
    let mut out = Vec::new();
    let mut next_leaf = 0;
    collect(ast, &mut next_leaf, &mut out);
    out
}

fn collect(node: &AstNode, next_leaf: &mut usize, out: &mut Vec<StructureRepr>) {
    if node.is_terminal {
        *next_leaf += 1;
        return;
    }
    let slot = out.len();
    out.push(StructureRepr {
        key: structure_key(node),
        root: node.label.clone(),
        tokens: Vec::new(),
    });
    let first = *next_leaf;
    for c in &node.children {
        collect(c, next_leaf, out);
    }
    out[slot].tokens = (first..*next_leaf).collect();
}

/// Per-token scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenScores {
    pub scores: ScoreVector,
    pub matched: usize,
    /// Matched token indices with no counterpart in the original tree.
    pub dropped: usize,
}

/// Multiset of the original tree's structure keys, reusable across many
/// predicted trees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureIndex {
    keys: Vec<String>,
    counts: Vec<usize>,
}

impl StructureIndex {
    pub fn new(original: &[StructureRepr]) -> Self {
        let mut sorted: Vec<&str> = original.iter().map(|s| s.key.as_str()).collect();
        sorted.sort_unstable();
        let mut keys: Vec<String> = Vec::new();
        let mut counts = Vec::new();
        for k in sorted {
            if keys.last().map(String::as_str) == Some(k) {
                *counts.last_mut().unwrap() += 1;
            } else {
                keys.push(k.to_string());
                counts.push(1);
            }
        }
        Self { keys, counts }
    }

    /// Number of occurrences of `key`.
    pub fn count(&self, key: &str) -> usize {
        self.position(key).map_or(0, |i| self.counts[i])
    }

    fn position(&self, key: &str) -> Option<usize> {
        self.keys.binary_search_by(|k| k.as_str().cmp(key)).ok()
    }
}

/// Scores the original tree's `n` tokens from the predicted structures that
/// also occur among the original ones. Each original structure can be
/// consumed once, so a predicted key matches at most as often as it occurs in
/// the original tree.
pub fn score_structures(
    predicted: &[StructureRepr],
    original: &[StructureRepr],
    n: usize,
    config: &ScoringConfig,
) -> TokenScores {
    score_indexed(predicted, &StructureIndex::new(original), n, config)
}

/// [`score_structures`] against a prebuilt index of the original structures.
pub fn score_indexed(
    predicted: &[StructureRepr],
    original: &StructureIndex,
    n: usize,
    config: &ScoringConfig,
) -> TokenScores {
    let mut remaining = original.counts.clone();
    let mut scores = vec![0.0; n];
    let (mut matched, mut dropped) = (0, 0);
    for s in predicted {
        let Some(left) = original.position(&s.key).map(|i| &mut remaining[i]).filter(|c| **c > 0) else {
            continue;
        };
        *left -= 1;
        matched += 1;
        let w = config.weight(&s.root);
        for &t in &s.tokens {
            match scores.get_mut(t) {
                Some(v) => *v += w,
                None => dropped += 1,
            }
        }
    }
    TokenScores {
        scores: ScoreVector(scores),
        matched,
        dropped,
    }
}

/// Token scores for the original tree's terminals from the structures shared
/// with the predicted tree.
///
/// When the predicted tree has more terminals than the original, its extra
/// token positions are dropped with a warning.
pub fn score_tokens(past: &AstNode, oast: &AstNode, config: &ScoringConfig) -> TokenScores {
    let n = oast.terminals().len();
    let out = score_structures(&extract_structures(past), &extract_structures(oast), n, config);
    if out.dropped > 0 {
        log::warn!(
            "predicted tree has {} terminals but the original has {n}; dropped {} token credits",
            past.terminals().len(),
            out.dropped
        );
    }
    out
}

/// Sums token scores onto the line where each token starts.
pub fn aggregate_lines(scores: &ScoreVector, spans: &[Span], index: &LineIndex) -> Result<Vec<f64>> {
    if scores.len() != spans.len() {
        return Err(Error::Alignment(format!(
            "{} scores for {} token spans",
            scores.len(),
            spans.len()
        )));
    }
    let mut lines = vec![0.0; index.line_count()];
    for (s, span) in scores.0.iter().zip(spans) {
        if span.end > index.text_len() || span.start > span.end {
            return Err(Error::Alignment(format!(
                "token span [{},{}) outside source of length {}",
                span.start,
                span.end,
                index.text_len()
            )));
        }
        let line = index.line_of(span.start)?;
        match lines.get_mut(line - 1) {
            Some(v) => *v += s,
            None => return Err(Error::Alignment(format!("token at line {line} beyond the last line"))),
        }
    }
    Ok(lines)
}

/// Line scores and their ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct LineRanking {
    /// Score of line `i + 1` at index `i`.
    pub scores: Vec<f64>,
    /// 1-based lines by descending score, ties by ascending line.
    pub order: Vec<usize>,
}

impl LineRanking {
    pub fn score(&self, line: usize) -> f64 {
        self.scores[line - 1]
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Orders lines by descending score, breaking ties by line number.
pub fn rank_lines(line_scores: &[f64]) -> Result<LineRanking> {
    if line_scores.is_empty() {
        return Err(Error::InvalidArgument("nothing to rank: no lines".into()));
    }
    if let Some(i) = line_scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score of line {}", i + 1)));
    }
    let mut order: Vec<usize> = (1..=line_scores.len()).collect();
    order.sort_by(|a, b| line_scores[b - 1].total_cmp(&line_scores[a - 1]).then(a.cmp(b)));
    Ok(LineRanking {
        scores: line_scores.to_vec(),
        order,
    })
}

/// Rebuilds the predicted tree over `leaves` from hidden rows.
///
/// The decoded binary tree is normalized by removing `∅` nodes and
/// re-expanding merged chains. A `∅` that cannot be spliced out (at the root,
/// or carrying a chain) is relabeled as unknown.
pub fn predict_ast(hidden: &HiddenMatrix, probe: &ProbeParams, leaves: &[Terminal]) -> Result<AstNode> {
    let tuple = predict_tuple(hidden, probe)?;
    let bt = decode_tuple(&tuple, leaves)?;
    debinarize(&repair_nil(bt, true))
}

fn repair_nil(node: BinaryNode, is_root: bool) -> BinaryNode {
    match node {
        BinaryNode::Internal {
            label,
            merged_chain,
            left,
            right,
        } => {
            let label = match label {
                BinaryLabel::Nil if is_root || !merged_chain.is_empty() => BinaryLabel::Symbol(UNK_LABEL.into()),
                other => other,
            };
            BinaryNode::Internal {
                label,
                merged_chain,
                left: Box::new(repair_nil(*left, false)),
                right: Box::new(repair_nil(*right, false)),
            }
        }
        leaf => leaf,
    }
}

/// Ranked lines of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ReportRecord", try_from = "ReportRecord")]
pub struct LocalizationReport {
    pub sample_id: String,
    pub predicted_label: Label,
    pub probability: f64,
    pub ranking: LineRanking,
    pub matched_structures: usize,
    pub past_nodes: usize,
    pub oast_nodes: usize,
}

#[derive(Serialize, Deserialize)]
struct ReportRecord {
    sample_id: String,
    predicted_label: Label,
    probability: Fixed6,
    ranked_lines: Vec<usize>,
    line_scores: BTreeMap<usize, Fixed6>,
    matched_structures: usize,
    past_nodes: usize,
    oast_nodes: usize,
}

impl From<LocalizationReport> for ReportRecord {
    fn from(r: LocalizationReport) -> Self {
        Self {
            sample_id: r.sample_id,
            predicted_label: r.predicted_label,
            probability: Fixed6(r.probability),
            line_scores: r
                .ranking
                .scores
                .iter()
                .enumerate()
                .map(|(i, s)| (i + 1, Fixed6(*s)))
                .collect(),
            ranked_lines: r.ranking.order,
            matched_structures: r.matched_structures,
            past_nodes: r.past_nodes,
            oast_nodes: r.oast_nodes,
        }
    }
}

impl TryFrom<ReportRecord> for LocalizationReport {
    type Error = String;

    fn try_from(r: ReportRecord) -> std::result::Result<Self, String> {
        let n = r.line_scores.len();
        if r.line_scores.keys().copied().ne(1..=n) {
            return Err("line_scores must cover lines 1..=n".into());
        }
        let mut seen = r.ranked_lines.clone();
        seen.sort_unstable();
        if seen.into_iter().ne(1..=n) {
            return Err("ranked_lines must be a permutation of the scored lines".into());
        }
        Ok(Self {
            sample_id: r.sample_id,
            predicted_label: r.predicted_label,
            probability: r.probability.0,
            ranking: LineRanking {
                scores: r.line_scores.into_values().map(|f| f.0).collect(),
                order: r.ranked_lines,
            },
            matched_structures: r.matched_structures,
            past_nodes: r.past_nodes,
            oast_nodes: r.oast_nodes,
        })
    }
}

/// Scores and ranks a sample's lines against an already reconstructed tree.
pub fn rank_against(
    code: &str,
    past: &AstNode,
    oast: &AstNode,
    config: &ScoringConfig,
) -> Result<(TokenScores, LineRanking)> {
    let spans: Vec<Span> = oast.terminals().iter().map(|t| t.span).collect();
    let scored = score_tokens(past, oast, config);
    let lines = aggregate_lines(&scored.scores, &spans, &LineIndex::new(code))?;
    let ranking = rank_lines(&lines)?;
    Ok((scored, ranking))
}

/// Full localization of one detected sample.
pub fn localize(
    code: &str,
    oast: &AstNode,
    detection: &DetectionResult,
    probe: &ProbeParams,
    config: &ScoringConfig,
) -> Result<LocalizationReport> {
    let leaves = oast.terminals();
    detection.hidden.check_alignment(&leaves)?;
    let past = predict_ast(&detection.hidden, probe, &leaves)?;
    let (scored, ranking) = rank_against(code, &past, oast, config)?;
    Ok(LocalizationReport {
        sample_id: detection.sample_id.clone(),
        predicted_label: detection.label,
        probability: detection.probability,
        ranking,
        matched_structures: scored.matched,
        past_nodes: past.node_count(),
        oast_nodes: oast.node_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_source;

    fn leaf(label: &str, i: usize) -> AstNode {
        AstNode::terminal(label, Span::new(i, i + 1))
    }

    fn node(label: &str, children: Vec<AstNode>) -> AstNode {
        AstNode::internal(label, children)
    }

    #[test]
    fn single_leaf_structure_key() {
        let s = extract_structures(&node("A", vec![leaf("w", 0)]));
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].key, "A \u{2212} A w");
        assert_eq!(s[0].tokens, vec![0]);
    }

    #[test]
    fn duplicate_subtrees_keep_multiplicity() {
        let be = |i| {
            node(
                "binary_expression",
                vec![leaf("identifier", i), leaf("+", i + 1), leaf("integer", i + 2)],
            )
        };
        let t = node("module", vec![be(0), be(3)]);
        let s = extract_structures(&t);
        assert_eq!(s.len(), t.internal_count());
        assert_eq!(s.iter().filter(|x| x.root == "binary_expression").count(), 2);
        assert_eq!(s[1].key, s[2].key);
        assert_eq!(s[2].tokens, vec![3, 4, 5]);
    }

    #[test]
    fn nothing_shared_scores_zero() {
        let o = node("module", vec![node("if_statement", vec![leaf("a", 0), leaf("b", 1)])]);
        let p = node("X", vec![node("Y", vec![leaf("a", 0), leaf("b", 1)])]);
        let r = score_tokens(&p, &o, &ScoringConfig::default());
        assert_eq!(r.scores.0, vec![0.0, 0.0]);
        assert_eq!(r.matched, 0);
    }

    #[test]
    fn one_control_flow_match() {
        let if_tree = node("if_statement", vec![leaf("if", 0), leaf("identifier", 1), leaf(":", 2)]);
        let o = node("module", vec![if_tree.clone(), leaf("pass", 3)]);
        let p = node("block", vec![if_tree, leaf("pass", 3)]);
        let r = score_tokens(&p, &o, &ScoringConfig::default());
        assert_eq!(r.scores.0, vec![1.5, 1.5, 1.5, 0.0]);
    }

    #[test]
    fn nested_matches_add_up() {
        let expr = node(
            "comparison_operator",
            vec![leaf("identifier", 1), leaf(">", 2), leaf("integer", 3)],
        );
        let if_tree = node("if_statement", vec![leaf("if", 0), expr]);
        let o = node("module", vec![if_tree.clone()]);
        let p = node("other", vec![if_tree]);
        let r = score_tokens(&p, &o, &ScoringConfig::default());
        assert_eq!(r.scores.0, vec![1.5, 2.5, 2.5, 2.5]);
    }

    #[test]
    fn surplus_duplicates_do_not_score() {
        let b = |i| node("B", vec![leaf("w", i)]);
        let o = node("R", vec![b(0), leaf("x", 1)]);
        let p = node("Q", vec![b(0), b(1)]);
        let r = score_tokens(&p, &o, &ScoringConfig::default());
        assert_eq!(r.scores.0, vec![1.0, 0.0]);
    }

    #[test]
    fn self_match_covers_every_token() {
        let ast = parse_source("for i in range(3):\n    x = i + 1\nprint(x)\n", "python").unwrap();
        let r = score_tokens(&ast, &ast, &ScoringConfig::default());
        assert!(r.scores.0.iter().all(|s| *s >= 1.0));
        assert_eq!(r.matched, ast.internal_count());
    }

    #[test]
    fn extra_predicted_tokens_are_dropped() {
        let o = node("A", vec![leaf("w", 0)]);
        let wide = node("R", vec![o.clone(), leaf("z", 1)]);
        let r = score_structures(
            &extract_structures(&wide),
            &[extract_structures(&o), extract_structures(&wide)].concat(),
            1,
            &ScoringConfig::default(),
        );
        assert_eq!(r.scores.0, vec![2.0]);
        assert_eq!(r.dropped, 1);
    }

    #[test]
    fn lines_sum_token_scores() {
        let idx = LineIndex::new("ab\ncd\n");
        let spans = [Span::new(0, 1), Span::new(1, 2), Span::new(3, 5)];
        let lines = aggregate_lines(&ScoreVector(vec![1.5, 1.5, 1.0]), &spans, &idx).unwrap();
        assert_eq!(lines, vec![3.0, 1.0]);
        let zero = aggregate_lines(&ScoreVector(vec![0.0; 3]), &spans, &idx).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
        let multi = aggregate_lines(&ScoreVector(vec![2.0]), &[Span::new(1, 5)], &idx).unwrap();
        assert_eq!(multi, vec![2.0, 0.0]);
        assert!(aggregate_lines(&ScoreVector(vec![1.0]), &[Span::new(4, 9)], &idx).is_err());
    }

    #[test]
    fn ranking_order_and_ties() {
        assert_eq!(rank_lines(&[3.0, 1.0]).unwrap().order, vec![1, 2]);
        assert_eq!(rank_lines(&[2.0, 2.0, 2.0]).unwrap().order, vec![1, 2, 3]);
        assert_eq!(rank_lines(&[0.0, 5.0, 1.0, 5.0]).unwrap().order, vec![2, 4, 3, 1]);
        assert!(rank_lines(&[]).is_err());
    }

    #[test]
    fn report_record_roundtrip() {
        let r = LocalizationReport {
            sample_id: "s".into(),
            predicted_label: Label::Hallucinated,
            probability: 0.75,
            ranking: rank_lines(&[1.0, 2.5]).unwrap(),
            matched_structures: 3,
            past_nodes: 9,
            oast_nodes: 9,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains(r#""line_scores":{"1":1.000000,"2":2.500000}"#), "{json}");
        assert!(json.contains(r#""ranked_lines":[2,1]"#), "{json}");
        assert_eq!(serde_json::from_str::<LocalizationReport>(&json).unwrap(), r);
    }

    #[test]
    fn nil_root_becomes_unknown() {
        let bt = BinaryNode::internal(
            BinaryLabel::Nil,
            BinaryNode::leaf("a", 0, Span::new(0, 1)),
            BinaryNode::leaf("b", 1, Span::new(1, 2)),
        );
        let ast = debinarize(&repair_nil(bt, true)).unwrap();
        assert_eq!(ast.label, UNK_LABEL);
    }
}
