use super::{join_chain, AstNode, Span, Terminal, NIL_LABEL};
use crate::{Error, Result};

/// Label of an internal binary node: a grammar symbol or the inserted `∅`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BinaryLabel {
    Nil,
    Symbol(String),
}

impl BinaryLabel {
    pub fn as_str(&self) -> &str {
        match self {
            BinaryLabel::Nil => NIL_LABEL,
            BinaryLabel::Symbol(s) => s,
        }
    }
}

/// A full binary tree over the terminals of a program.
///
/// `merged_chain` lists the unary ancestors absorbed into a node, outermost
/// first. Leaves keep their terminal label; `∅` can only label internal nodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BinaryNode {
    Leaf {
        label: String,
        merged_chain: Vec<String>,
        terminal_index: usize,
        span: Span,
    },
    Internal {
        label: BinaryLabel,
        merged_chain: Vec<String>,
        left: Box<BinaryNode>,
        right: Box<BinaryNode>,
    },
}

impl BinaryNode {
    pub fn leaf(label: impl Into<String>, terminal_index: usize, span: Span) -> Self {
        BinaryNode::Leaf {
            label: label.into(),
            merged_chain: Vec::new(),
            terminal_index,
            span,
        }
    }

    pub fn internal(label: BinaryLabel, left: BinaryNode, right: BinaryNode) -> Self {
        BinaryNode::Internal {
            label,
            merged_chain: Vec::new(),
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn merged_chain(&self) -> &[String] {
        match self {
            BinaryNode::Leaf { merged_chain, .. } | BinaryNode::Internal { merged_chain, .. } => merged_chain,
        }
    }

    pub fn merged_chain_mut(&mut self) -> &mut Vec<String> {
        match self {
            BinaryNode::Leaf { merged_chain, .. } | BinaryNode::Internal { merged_chain, .. } => merged_chain,
        }
    }

    pub fn with_chain(mut self, chain: Vec<String>) -> Self {
        *self.merged_chain_mut() = chain;
        self
    }

    /// The node's own label, `<nil>` for `∅`.
    pub fn label_str(&self) -> &str {
        match self {
            BinaryNode::Leaf { label, .. } => label,
            BinaryNode::Internal { label, .. } => label.as_str(),
        }
    }

    /// Merged chain followed by the own label, joined with `|`.
    pub fn composite_label(&self) -> String {
        join_chain(
            self.merged_chain()
                .iter()
                .map(String::as_str)
                .chain(std::iter::once(self.label_str())),
        )
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            BinaryNode::Leaf { .. } => 1,
            BinaryNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn terminals(&self) -> Vec<Terminal> {
        let mut out = Vec::new();
        self.collect_terminals(&mut out);
        out
    }

    fn collect_terminals(&self, out: &mut Vec<Terminal>) {
        match self {
            BinaryNode::Leaf { label, span, .. } => out.push(Terminal {
                label: label.clone(),
                span: *span,
            }),
            BinaryNode::Internal { left, right, .. } => {
                left.collect_terminals(out);
                right.collect_terminals(out);
            }
        }
    }

    /// Hull of the leaf spans.
    pub fn span(&self) -> Span {
        match self {
            BinaryNode::Leaf { span, .. } => *span,
            BinaryNode::Internal { left, right, .. } => Span::new(left.span().start, right.span().end),
        }
    }
}

/// Converts a syntax tree into a full binary tree.
///
/// N-ary nodes keep their first child and nest the rest under right-branching
/// `∅` nodes; unary nodes are absorbed into their child's `merged_chain`.
/// Fails only for trees without terminals.
pub fn binarize(ast: &AstNode) -> Result<BinaryNode> {
    if ast.terminals().is_empty() {
        return Err(Error::Structure(format!(
            "`{}` has no terminals to binarize",
            ast.label
        )));
    }
    let mut next_index = 0;
    Ok(binarize_node(ast, &mut next_index))
}

fn binarize_node(node: &AstNode, next_index: &mut usize) -> BinaryNode {
    if node.is_terminal {
        let leaf = BinaryNode::leaf(node.label.clone(), *next_index, node.span);
        *next_index += 1;
        return leaf;
    }
    match node.children.as_slice() {
        [only] => {
            let mut inner = binarize_node(only, next_index);
            inner.merged_chain_mut().insert(0, node.label.clone());
            inner
        }
        [first, rest @ ..] => {
            let left = binarize_node(first, next_index);
            let right = fold_nil(rest, next_index);
            BinaryNode::internal(BinaryLabel::Symbol(node.label.clone()), left, right)
        }
        [] => unreachable!("non-terminal without children below the root"),
    }
}

fn fold_nil(children: &[AstNode], next_index: &mut usize) -> BinaryNode {
    match children {
        [only] => binarize_node(only, next_index),
        [first, rest @ ..] => {
            let left = binarize_node(first, next_index);
            let right = fold_nil(rest, next_index);
            BinaryNode::internal(BinaryLabel::Nil, left, right)
        }
        [] => unreachable!(),
    }
}

/// Inverse of [`binarize`]: splices out `∅` nodes and re-expands merged
/// unary chains.
///
/// A `∅` root has no parent to splice into and is rejected, as is a `∅` node
/// carrying a merged chain.
pub fn debinarize(bt: &BinaryNode) -> Result<AstNode> {
    if let BinaryNode::Internal {
        label: BinaryLabel::Nil,
        ..
    } = bt
    {
        return Err(Error::Structure("∅ at the root cannot be spliced out".into()));
    }
    let mut nodes = expand(bt)?;
    debug_assert_eq!(nodes.len(), 1);
    Ok(nodes.pop().expect("non-∅ root expands to one node"))
}

fn expand(bt: &BinaryNode) -> Result<Vec<AstNode>> {
    match bt {
        BinaryNode::Leaf {
            label,
            merged_chain,
            span,
            ..
        } => Ok(vec![wrap_chain(AstNode::terminal(label.clone(), *span), merged_chain)]),
        BinaryNode::Internal {
            label,
            merged_chain,
            left,
            right,
        } => {
            let mut children = expand(left)?;
            children.extend(expand(right)?);
            match label {
                BinaryLabel::Nil if merged_chain.is_empty() => Ok(children),
                BinaryLabel::Nil => Err(Error::Structure(format!(
                    "∅ node carries merged chain {merged_chain:?}"
                ))),
                BinaryLabel::Symbol(sym) => {
                    Ok(vec![wrap_chain(AstNode::internal(sym.clone(), children), merged_chain)])
                }
            }
        }
    }
}

fn wrap_chain(mut node: AstNode, chain: &[String]) -> AstNode {
    for label in chain.iter().rev() {
        node = AstNode::internal(label.clone(), vec![node]);
    }
    node
}
