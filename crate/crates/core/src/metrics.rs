//! Detection and localization metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::io::Fixed6;
use crate::localize::LineRanking;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    /// Tallies `(gold, predicted)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = Self::default();
        for (gold, pred) in pairs {
            match (gold, pred) {
                (Label::Hallucinated, Label::Hallucinated) => c.tp += 1,
                (Label::Clean, Label::Hallucinated) => c.fp += 1,
                (Label::Hallucinated, Label::Clean) => c.fn_ += 1,
                (Label::Clean, Label::Clean) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `(precision, recall, F1)`; any zero denominator yields 0.
pub fn prf1(c: &ConfusionCounts) -> (f64, f64, f64) {
    let precision = ratio(c.tp as f64, (c.tp + c.fp) as f64);
    let recall = ratio(c.tp as f64, (c.tp + c.fn_) as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    (precision, recall, f1)
}

/// One gold-hallucinated sample under localization evaluation. A missing
/// ranking means the sample was never localized and counts as a full miss.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub sample_id: String,
    pub gold_lines: BTreeSet<usize>,
    pub total_lines: usize,
    pub ranking: Option<LineRanking>,
}

impl EvalCase {
    fn ranked(&self) -> &[usize] {
        self.ranking.as_ref().map_or(&[], |r| r.order.as_slice())
    }
}

/// Fraction of cases whose first `k` ranked lines contain a gold line.
pub fn topk_accuracy(cases: &[EvalCase], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let hits = cases
        .iter()
        .filter(|c| c.ranked().iter().take(k).any(|l| c.gold_lines.contains(l)))
        .count();
    Ok(ratio(hits as f64, cases.len() as f64))
}

/// Lines inspected before the first gold line; the sample's line count when
/// no gold line is ranked.
pub fn case_ifa(case: &EvalCase) -> usize {
    case.ranked()
        .iter()
        .position(|l| case.gold_lines.contains(l))
        .unwrap_or(case.total_lines)
}

pub fn mean_ifa(cases: &[EvalCase]) -> f64 {
    let sum: usize = cases.iter().map(case_ifa).sum();
    ratio(sum as f64, cases.len() as f64)
}

/// How lines from different samples are merged for the effort metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffortMode {
    /// One corpus-wide inspection order.
    #[default]
    Global,
    /// Each sample on its own, averaged over samples with gold lines.
    PerSample,
}

/// Whether each inspected line is gold, in inspection order.
///
/// Ranked lines are ordered by score divided by their sample's maximum score
/// (descending), then sample id, then rank. Lines of unranked samples follow
/// in sample-id and line order.
pub fn global_inspection_order(cases: &[EvalCase]) -> Vec<bool> {
    let mut ranked: Vec<(f64, &str, usize, bool)> = Vec::new();
    let mut unranked: Vec<(&str, usize, bool)> = Vec::new();
    for c in cases {
        match &c.ranking {
            Some(r) => {
                let max = r.scores.iter().copied().fold(0.0, f64::max);
                for (pos, line) in r.order.iter().enumerate() {
                    let s = r.score(*line);
                    let norm = if max > 0.0 { s / max } else { 0.0 };
                    ranked.push((norm, &c.sample_id, pos, c.gold_lines.contains(line)));
                }
            }
            None => {
                for line in 1..=c.total_lines {
                    unranked.push((&c.sample_id, line, c.gold_lines.contains(&line)));
                }
            }
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
    unranked.sort();
    ranked
        .into_iter()
        .map(|r| r.3)
        .chain(unranked.into_iter().map(|u| u.2))
        .collect()
}

fn case_order(case: &EvalCase) -> Vec<bool> {
    match &case.ranking {
        Some(r) => r.order.iter().map(|l| case.gold_lines.contains(l)).collect(),
        None => (1..=case.total_lines).map(|l| case.gold_lines.contains(&l)).collect(),
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} {v} outside (0, 1]")))
    }
}

/// `ceil(x)` that ignores floating-point noise just above an integer.
fn ceil_tolerant(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

fn recall_in_prefix(order: &[bool], effort: f64) -> Option<f64> {
    let gold = order.iter().filter(|g| **g).count();
    if gold == 0 {
        return None;
    }
    let inspect = ceil_tolerant(effort * order.len() as f64).min(order.len());
    let found = order[..inspect].iter().filter(|g| **g).count();
    Some(found as f64 / gold as f64)
}

fn effort_for_recall(order: &[bool], target: f64) -> Option<f64> {
    let gold = order.iter().filter(|g| **g).count();
    if gold == 0 {
        return None;
    }
    let need = ceil_tolerant(target * gold as f64).max(1);
    let mut found = 0;
    for (i, g) in order.iter().enumerate() {
        found += usize::from(*g);
        if found >= need {
            return Some((i + 1) as f64 / order.len() as f64);
        }
    }
    None
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ratio(sum, n as f64)
}

/// Share of all gold lines found within the first `effort` fraction of lines.
pub fn recall_at_effort(cases: &[EvalCase], effort: f64, mode: EffortMode) -> Result<f64> {
    check_fraction("effort", effort)?;
    Ok(match mode {
        EffortMode::Global => recall_in_prefix(&global_inspection_order(cases), effort).unwrap_or(0.0),
        EffortMode::PerSample => mean(cases.iter().filter_map(|c| recall_in_prefix(&case_order(c), effort))),
    })
}

/// Smallest fraction of lines that must be inspected to reach `target`
/// recall; 1.0 when the target is unreachable.
pub fn effort_at_recall(cases: &[EvalCase], target: f64, mode: EffortMode) -> Result<f64> {
    check_fraction("target recall", target)?;
    Ok(match mode {
        EffortMode::Global => effort_for_recall(&global_inspection_order(cases), target).unwrap_or(1.0),
        EffortMode::PerSample => {
            let with_gold: Vec<_> = cases.iter().filter(|c| !c.gold_lines.is_empty()).collect();
            if with_gold.is_empty() {
                1.0
            } else {
                mean(
                    with_gold
                        .iter()
                        .map(|c| effort_for_recall(&case_order(c), target).unwrap_or(1.0)),
                )
            }
        }
    })
}

pub const TOP_KS: [usize; 4] = [1, 3, 5, 10];
pub const DEFAULT_EFFORT: f64 = 0.01;
pub const DEFAULT_TARGET_RECALL: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub precision: Fixed6,
    pub recall: Fixed6,
    pub f1: Fixed6,
    pub top_1: Fixed6,
    pub top_3: Fixed6,
    pub top_5: Fixed6,
    pub top_10: Fixed6,
    pub mean_ifa: Fixed6,
    pub recall_at_1pct_effort: Fixed6,
    pub effort_at_20pct_recall: Fixed6,
    pub effort_mode: EffortMode,
    /// Gold-hallucinated samples in the localization population.
    pub evaluated: usize,
    /// Of those, samples without a localization report.
    pub skipped: usize,
    /// True when unreported samples were dropped instead of scored as misses.
    pub conditioned_on_detection: bool,
}

impl MetricsReport {
    /// Builds the report. With `conditioned_on_detection`, cases without a
    /// ranking are excluded from the localization metrics.
    pub fn compute(
        counts: ConfusionCounts,
        cases: &[EvalCase],
        mode: EffortMode,
        conditioned_on_detection: bool,
    ) -> Result<Self> {
        let skipped = cases.iter().filter(|c| c.ranking.is_none()).count();
        let kept: Vec<EvalCase> = if conditioned_on_detection {
            cases.iter().filter(|c| c.ranking.is_some()).cloned().collect()
        } else {
            cases.to_vec()
        };
        let (precision, recall, f1) = prf1(&counts);
        let top = |k| topk_accuracy(&kept, k).map(Fixed6);
        Ok(Self {
            counts,
            precision: Fixed6(precision),
            recall: Fixed6(recall),
            f1: Fixed6(f1),
            top_1: top(1)?,
            top_3: top(3)?,
            top_5: top(5)?,
            top_10: top(10)?,
            mean_ifa: Fixed6(mean_ifa(&kept)),
            recall_at_1pct_effort: Fixed6(recall_at_effort(&kept, DEFAULT_EFFORT, mode)?),
            effort_at_20pct_recall: Fixed6(effort_at_recall(&kept, DEFAULT_TARGET_RECALL, mode)?),
            effort_mode: mode,
            evaluated: cases.len(),
            skipped,
            conditioned_on_detection,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localize::rank_lines;

    fn case(id: &str, gold: &[usize], order: &[usize]) -> EvalCase {
        let n = order.len();
        // scores strictly decreasing along the ranking
        let mut scores = vec![0.0; n];
        for (pos, l) in order.iter().enumerate() {
            scores[l - 1] = (n - pos) as f64;
        }
        EvalCase {
            sample_id: id.into(),
            gold_lines: gold.iter().copied().collect(),
            total_lines: n,
            ranking: Some(rank_lines(&scores).unwrap()),
        }
    }

    #[test]
    fn prf1_hand_values() {
        let c = ConfusionCounts {
            tp: 2,
            fp: 1,
            fn_: 1,
            tn: 0,
        };
        let (p, r, f) = prf1(&c);
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(prf1(&ConfusionCounts::default()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn topk_hand_values() {
        assert_eq!(topk_accuracy(&[case("a", &[3], &[3, 1, 2])], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&[case("a", &[3], &[1, 2, 3])], 2).unwrap(), 0.0);
        let cases = [
            case("a", &[1], &[1, 2, 3, 4, 5]),
            case("b", &[4], &[1, 2, 3, 4, 5]),
            case("c", &[2], &[1, 2, 3, 4, 5]),
        ];
        assert!((topk_accuracy(&cases, 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(topk_accuracy(&cases, 0).is_err());
    }

    #[test]
    fn ifa_hand_values() {
        assert_eq!(case_ifa(&case("a", &[3], &[3, 1, 2])), 0);
        assert_eq!(case_ifa(&case("a", &[3], &[5, 2, 3, 1, 4])), 2);
        let cases = [case("a", &[1], &[1, 2, 3, 4, 5]), case("b", &[5], &[1, 2, 3, 4, 5])];
        assert_eq!(mean_ifa(&cases), 2.0);
        let missing = EvalCase {
            ranking: None,
            ..case("c", &[2], &[1, 2, 3])
        };
        assert_eq!(case_ifa(&missing), 3);
    }

    #[test]
    fn recall_at_effort_hand_value() {
        // 100 lines over 10 samples, one gold line each; the single inspected
        // line is sample a's top line, which is gold
        let order: Vec<usize> = (1..=10).collect();
        let mut cases = vec![case("a", &[1], &order)];
        for i in 0..9 {
            cases.push(case(&format!("b{i}"), &[10], &order));
        }
        let r = recall_at_effort(&cases, 0.01, EffortMode::Global).unwrap();
        assert!((r - 0.1).abs() < 1e-15, "{r}");
        assert_eq!(recall_at_effort(&cases, 1.0, EffortMode::Global).unwrap(), 1.0);
        assert_eq!(recall_at_effort(&[], 0.5, EffortMode::Global).unwrap(), 0.0);
        assert!(recall_at_effort(&cases, 0.0, EffortMode::Global).is_err());
        assert!(recall_at_effort(&cases, 1.5, EffortMode::Global).is_err());
    }

    #[test]
    fn effort_at_recall_hand_values() {
        // one sample, 50 lines, 5 gold; the first gold line is 4th
        let order: Vec<usize> = (1..=50).collect();
        let c = case("a", &[4, 20, 30, 40, 50], &order);
        let e = effort_at_recall(std::slice::from_ref(&c), 0.2, EffortMode::Global).unwrap();
        assert!((e - 0.08).abs() < 1e-15, "{e}");
        let first = case("a", &[1, 20, 30, 40, 50], &order);
        assert_eq!(
            effort_at_recall(&[first], 0.01, EffortMode::Global).unwrap(),
            1.0 / 50.0
        );
        let never = EvalCase {
            ranking: None,
            gold_lines: BTreeSet::new(),
            ..c
        };
        assert_eq!(effort_at_recall(&[never], 0.2, EffortMode::Global).unwrap(), 1.0);
    }

    #[test]
    fn per_sample_mode_averages() {
        let cases = [case("a", &[1], &[1, 2, 3, 4]), case("b", &[4], &[1, 2, 3, 4])];
        assert_eq!(recall_at_effort(&cases, 0.25, EffortMode::PerSample).unwrap(), 0.5);
        assert_eq!(
            effort_at_recall(&cases, 1.0, EffortMode::PerSample).unwrap(),
            (0.25 + 1.0) / 2.0
        );
    }

    #[test]
    fn unranked_lines_come_last() {
        let mut missing = case("a", &[1], &[1, 2]);
        missing.ranking = None;
        let order = global_inspection_order(&[missing, case("z", &[2], &[2, 1])]);
        assert_eq!(order, vec![true, false, true, false]);
    }

    #[test]
    fn report_serializes_six_digits() {
        let cases = [case("a", &[1], &[1, 2, 3])];
        let counts = ConfusionCounts {
            tp: 1,
            fp: 0,
            fn_: 0,
            tn: 1,
        };
        let r = MetricsReport::compute(counts, &cases, EffortMode::Global, false).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"top_1\":1.000000"), "{json}");
        assert!(json.contains("\"fn\":0"), "{json}");
    }
}
