//! Syntax trees and the tree / binary tree / `(d, c, u)` tuple codec.
//!
//! A parsed program is an ordered labeled tree ([`AstNode`]). [`binarize`]
//! turns it into a full binary tree ([`BinaryNode`]) by folding n-ary nodes
//! into right-branching chains of `∅` nodes and merging unary nodes into
//! their only child. [`encode_tuple`] linearizes the binary tree into one
//! depth and one label per pair of adjacent terminals plus one merged-chain
//! label per terminal; [`decode_tuple`] and [`debinarize`] invert both steps.

mod binary;
mod dump;
mod parse;
mod tuple;

use serde::{Deserialize, Serialize};

pub use binary::{binarize, debinarize, BinaryLabel, BinaryNode};
pub use dump::{dump_ast, dump_binary};
pub use parse::{parse_source, GrammarBackend, TreeSitterPython};
pub use tuple::{decode_tuple, encode_tuple, TupleEncoding};

/// Rendering of the `∅` node inserted by binarization.
pub const NIL_LABEL: &str = "<nil>";
/// `u` entry for a terminal that absorbed no unary ancestors.
pub const EMPTY_LABEL: &str = "<empty>";
/// Separator between the labels of a merged unary chain.
pub const CHAIN_SEPARATOR: char = '|';

/// Half-open byte range `[start, end)` into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A leaf of a syntax tree: its grammar label and source span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Terminal {
    pub label: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AstNode {
    pub label: String,
    pub children: Vec<AstNode>,
    pub span: Span,
    pub is_terminal: bool,
}

impl AstNode {
    pub fn terminal(label: impl Into<String>, span: Span) -> Self {
        Self {
            label: label.into(),
            children: Vec::new(),
            span,
            is_terminal: true,
        }
    }

    /// A non-terminal whose span is the hull of its children.
    pub fn internal(label: impl Into<String>, children: Vec<AstNode>) -> Self {
        let span = match (children.first(), children.last()) {
            (Some(first), Some(last)) => Span::new(first.span.start, last.span.end),
            _ => Span::new(0, 0),
        };
        Self {
            label: label.into(),
            children,
            span,
            is_terminal: false,
        }
    }

    /// Leaves in source order.
    pub fn terminals(&self) -> Vec<Terminal> {
        let mut out = Vec::new();
        self.collect_terminals(&mut out);
        out
    }

    fn collect_terminals(&self, out: &mut Vec<Terminal>) {
        if self.is_terminal {
            out.push(Terminal {
                label: self.label.clone(),
                span: self.span,
            });
        }
        for c in &self.children {
            c.collect_terminals(out);
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(AstNode::node_count).sum::<usize>()
    }

    pub fn internal_count(&self) -> usize {
        let own = usize::from(!self.is_terminal);
        own + self.children.iter().map(AstNode::internal_count).sum::<usize>()
    }

    /// Preorder iterator over all nodes.
    pub fn preorder(&self) -> Preorder<'_> {
        Preorder { stack: vec![self] }
    }

    /// Checks the structural invariants: terminals are childless, every
    /// non-root non-terminal has children, and child spans are ordered,
    /// disjoint and inside the parent span.
    pub fn validate(&self) -> crate::Result<()> {
        self.validate_at(true)
    }

    fn validate_at(&self, is_root: bool) -> crate::Result<()> {
        if self.is_terminal && !self.children.is_empty() {
            return Err(crate::Error::Structure(format!(
                "terminal `{}` has children",
                self.label
            )));
        }
        if !self.is_terminal && self.children.is_empty() && !is_root {
            return Err(crate::Error::Structure(format!(
                "non-terminal `{}` has no children",
                self.label
            )));
        }
        let mut cursor = self.span.start;
        for c in &self.children {
            if c.span.start < cursor || c.span.end > self.span.end {
                return Err(crate::Error::Structure(format!(
                    "child `{}` span [{},{}) escapes parent `{}` [{},{})",
                    c.label, c.span.start, c.span.end, self.label, self.span.start, self.span.end
                )));
            }
            cursor = c.span.end;
            c.validate_at(false)?;
        }
        Ok(())
    }
}

pub struct Preorder<'a> {
    stack: Vec<&'a AstNode>,
}

impl<'a> Iterator for Preorder<'a> {
    type Item = &'a AstNode;

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

/// Joins a merged unary chain (outermost first) and an optional own label.
pub(crate) fn join_chain<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for (i, p) in parts.into_iter().enumerate() {
        if i > 0 {
            out.push(CHAIN_SEPARATOR);
        }
        out.push_str(p);
    }
    out
}
