use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Label, Sample, DEFAULT_LANG};
use crate::{Error, Result};

/// Single-line semantic edits applied to clean programs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    OperatorSwap,
    OffByOne,
    WrongVariable,
}

impl MutationKind {
    pub const ALL: [MutationKind; 3] = [
        MutationKind::OperatorSwap,
        MutationKind::OffByOne,
        MutationKind::WrongVariable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MutationKind::OperatorSwap => "operator_swap",
            MutationKind::OffByOne => "off_by_one",
            MutationKind::WrongVariable => "wrong_variable",
        }
    }
}

const FUNCTION_NAMES: &[&str] = &[
    "accumulate",
    "scan",
    "combine",
    "measure",
    "reduce_items",
    "tally",
    "score",
    "blend",
    "collect",
    "weigh",
];
const PARAMS: &[&str] = &["limit", "step", "base", "width", "seed", "offset"];
const LOCALS: &[&str] = &["total", "count", "value", "result", "acc", "level"];
const LOOP_VARS: &[&str] = &["i", "j", "k"];

const OPERATOR_SWAPS: &[(&str, &str)] = &[
    (" + ", " - "),
    (" - ", " + "),
    (" * ", " + "),
    (" // ", " * "),
    (" % ", " // "),
    (" < ", " > "),
    (" > ", " < "),
    (" <= ", " >= "),
    (" >= ", " <= "),
    (" == ", " != "),
    (" != ", " == "),
];

struct Program {
    lines: Vec<String>,
    /// Identifiers usable as substitutes for wrong-variable edits.
    names: Vec<String>,
}

/// Emits `count` samples as clean/mutated pairs. Each mutated program differs
/// from its clean twin on exactly the line recorded as hallucinated.
pub fn generate_synthetic(seed: u64, count: usize) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut pair = 0usize;
    while out.len() < count {
        let program = random_program(&mut rng);
        let clean = program.lines.join("\n") + "\n";
        let (line, kind, mutated) = mutate(&program, &mut rng);
        out.push(Sample {
            id: format!("syn{seed}_{pair:04}_c"),
            code: clean,
            label: Label::Clean,
            hallucinated_lines: BTreeSet::new(),
            lang: DEFAULT_LANG.into(),
            taxonomy_tag: None,
        });
        if out.len() < count {
            out.push(Sample {
                id: format!("syn{seed}_{pair:04}_h"),
                code: mutated,
                label: Label::Hallucinated,
                hallucinated_lines: BTreeSet::from([line]),
                lang: DEFAULT_LANG.into(),
                taxonomy_tag: Some(kind.as_str().into()),
            });
        }
        pair += 1;
    }
    Ok(out)
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).copied().expect("non-empty pool")
}

fn random_program<R: Rng>(rng: &mut R) -> Program {
    let fname = pick(rng, FUNCTION_NAMES);
    let mut params: Vec<&str> = PARAMS.choose_multiple(rng, 2).copied().collect();
    params.sort_unstable();
    let (a, b) = (params[0], params[1]);
    let acc = pick(rng, LOCALS);
    let other = LOCALS
        .iter()
        .copied()
        .filter(|l| *l != acc)
        .collect::<Vec<_>>()
        .choose(rng)
        .copied()
        .unwrap();

    let mut lines = vec![
        format!("def {fname}({a}, {b}):"),
        format!("    {acc} = 0"),
        format!("    {other} = {}", rng.gen_range(1..5)),
    ];
    let blocks = rng.gen_range(2..=4);
    for _ in 0..blocks {
        let i = pick(rng, LOOP_VARS);
        let c = rng.gen_range(1..10);
        let block: Vec<String> = match rng.gen_range(0..6) {
            0 => vec![
                format!("    for {i} in range({a}):"),
                format!("        {acc} = {acc} + {i} * {b}"),
            ],
            1 => vec![
                format!("    if {acc} > {b}:"),
                format!("        {acc} = {acc} - {b}"),
                "    else:".into(),
                format!("        {other} = {other} + {c}"),
            ],
            2 => vec![
                format!("    while {other} < {a}:"),
                format!("        {other} = {other} * 2 + 1"),
            ],
            3 => vec![
                "    try:".into(),
                format!("        {acc} = {acc} // {b}"),
                "    except ZeroDivisionError:".into(),
                format!("        {acc} = {other}"),
            ],
            4 => vec![format!("    {other} = sum([{i} % {c} for {i} in range({b})])")],
            _ => vec![
                format!("    if {other} == {c}:"),
                format!("        {acc} = {acc} + {a}"),
                format!("    elif {other} >= {b}:"),
                format!("        {acc} = {acc} - {other}"),
            ],
        };
        lines.extend(block);
    }
    lines.push(format!("    return {acc} + {other}"));
    Program {
        lines,
        names: vec![a.into(), b.into(), acc.into(), other.into()],
    }
}

/// Candidate rewrites of one line, as `(kind, new_line)`.
fn candidates(line: &str, names: &[String]) -> Vec<(MutationKind, String)> {
    let mut out = Vec::new();
    for (from, to) in OPERATOR_SWAPS {
        if let Some(pos) = line.find(from) {
            let mut s = line.to_string();
            s.replace_range(pos..pos + from.len(), to);
            out.push((MutationKind::OperatorSwap, s));
        }
    }
    if let Some(start) = line.find("range(") {
        let open = start + "range(".len();
        if let Some(close) = line[open..].find(')') {
            let arg = &line[open..open + close];
            let s = format!("{}{arg} - 1{}", &line[..open], &line[open + close..]);
            out.push((MutationKind::OffByOne, s));
        }
    }
    for name in names {
        if let Some(pos) = find_word(line, name) {
            for other in names.iter().filter(|o| *o != name) {
                let mut s = line.to_string();
                s.replace_range(pos..pos + name.len(), other);
                out.push((MutationKind::WrongVariable, s));
            }
        }
    }
    out
}

fn find_word(line: &str, word: &str) -> Option<usize> {
    let is_ident = |c: char| c.is_ascii_alphanumeric() || c == '_';
    line.match_indices(word).map(|(i, _)| i).find(|&i| {
        let before = line[..i].chars().next_back().is_none_or(|c| !is_ident(c));
        let after = line[i + word.len()..].chars().next().is_none_or(|c| !is_ident(c));
        before && after
    })
}

/// Returns the 1-based edited line, the edit kind and the mutated program.
fn mutate<R: Rng>(program: &Program, rng: &mut R) -> (usize, MutationKind, String) {
    let kind = *MutationKind::ALL.choose(rng).unwrap();
    let per_line: Vec<(usize, Vec<(MutationKind, String)>)> = program
        .lines
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, l)| (i, candidates(l, &program.names)))
        .collect();
    let of_kind: Vec<(usize, &String)> = per_line
        .iter()
        .flat_map(|(i, c)| c.iter().filter(|(k, _)| *k == kind).map(move |(_, s)| (*i, s)))
        .collect();
    // every program has a binary operator and a variable; range() may be absent
    let (line, kind, new_line) = if of_kind.is_empty() {
        let any: Vec<(usize, &(MutationKind, String))> = per_line
            .iter()
            .flat_map(|(i, c)| c.iter().map(move |m| (*i, m)))
            .collect();
        let (i, (k, s)) = *any.choose(rng).expect("programs always admit an edit");
        (i, *k, s.clone())
    } else {
        let (i, s) = *of_kind.choose(rng).unwrap();
        (i, kind, s.clone())
    };
    let mut lines = program.lines.clone();
    lines[line] = new_line;
    (line + 1, kind, lines.join("\n") + "\n")
}
