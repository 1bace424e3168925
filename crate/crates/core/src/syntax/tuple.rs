use serde::{Deserialize, Serialize};

use super::{join_chain, BinaryLabel, BinaryNode, Terminal, CHAIN_SEPARATOR, EMPTY_LABEL, NIL_LABEL};
use crate::{Error, Result};

/// The `(d, c, u)` linearization of a binary tree with `n` terminals.
///
/// `d[i]` is the depth (root = 1) of the lowest common ancestor of terminals
/// `i` and `i + 1`, `c[i]` its composite label, and `u[j]` the merged unary
/// chain of terminal `j` or `<empty>`. Gold tuples have integral depths;
/// predicted ones are real-valued and only their ordering matters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleEncoding {
    pub d: Vec<f64>,
    pub c: Vec<String>,
    pub u: Vec<String>,
}

impl TupleEncoding {
    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.u.len();
        if n == 0 {
            return Err(Error::Shape("tuple has no terminals".into()));
        }
        if self.d.len() != n - 1 || self.c.len() != n - 1 {
            return Err(Error::Shape(format!(
                "tuple lengths |d|={} |c|={} |u|={} violate |d|=|c|=|u|-1",
                self.d.len(),
                self.c.len(),
                n
            )));
        }
        if let Some(i) = self.d.iter().position(|d| !d.is_finite()) {
            return Err(Error::NonFinite(format!("d[{i}]")));
        }
        Ok(())
    }
}

/// Linearizes a binary tree into its `(d, c, u)` tuple.
pub fn encode_tuple(bt: &BinaryNode) -> TupleEncoding {
    let mut t = TupleEncoding {
        d: Vec::new(),
        c: Vec::new(),
        u: Vec::new(),
    };
    walk(bt, 1, &mut t);
    t
}

fn walk(node: &BinaryNode, depth: usize, t: &mut TupleEncoding) {
    match node {
        BinaryNode::Leaf { merged_chain, .. } => {
            t.u.push(if merged_chain.is_empty() {
                EMPTY_LABEL.to_string()
            } else {
                join_chain(merged_chain.iter().map(String::as_str))
            });
        }
        BinaryNode::Internal { left, right, .. } => {
            walk(left, depth + 1, t);
            // the last leaf of `left` and the first of `right` meet here
            t.d.push(depth as f64);
            t.c.push(node.composite_label());
            walk(right, depth + 1, t);
        }
    }
}

/// Rebuilds the binary tree over `leaves` from a tuple.
///
/// Each slice is split at the leftmost minimum of its depths; that pair's
/// label names the internal node. For gold tuples this inverts
/// [`encode_tuple`] exactly.
pub fn decode_tuple(t: &TupleEncoding, leaves: &[Terminal]) -> Result<BinaryNode> {
    t.validate()?;
    if leaves.len() != t.n() {
        return Err(Error::Shape(format!(
            "tuple has {} terminals but {} leaves were supplied",
            t.n(),
            leaves.len()
        )));
    }
    Ok(build(t, leaves, 0, t.n()))
}

fn build(t: &TupleEncoding, leaves: &[Terminal], lo: usize, hi: usize) -> BinaryNode {
    if hi - lo == 1 {
        let leaf = &leaves[lo];
        return BinaryNode::leaf(leaf.label.clone(), lo, leaf.span).with_chain(split_u(&t.u[lo]));
    }
    let mut split = lo;
    for i in lo + 1..hi - 1 {
        if t.d[i] < t.d[split] {
            split = i;
        }
    }
    let (label, chain) = split_c(&t.c[split]);
    let left = build(t, leaves, lo, split + 1);
    let right = build(t, leaves, split + 1, hi);
    BinaryNode::internal(label, left, right).with_chain(chain)
}

fn split_u(u: &str) -> Vec<String> {
    if u == EMPTY_LABEL {
        Vec::new()
    } else {
        u.split(CHAIN_SEPARATOR).map(str::to_string).collect()
    }
}

fn split_c(c: &str) -> (BinaryLabel, Vec<String>) {
    let mut parts: Vec<String> = c.split(CHAIN_SEPARATOR).map(str::to_string).collect();
    let own = parts.pop().unwrap_or_default();
    let label = if own == NIL_LABEL {
        BinaryLabel::Nil
    } else {
        BinaryLabel::Symbol(own)
    };
    (label, parts)
}
