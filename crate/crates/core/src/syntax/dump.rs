use std::fmt::Write;

use super::{AstNode, BinaryNode};

/// Indented preorder dump, one `label [start,end)` line per node.
pub fn dump_ast(ast: &AstNode) -> String {
    let mut out = String::new();
    for_each_depth(ast, 0, &mut |node, depth| {
        let _ = writeln!(
            out,
            "{}{} [{},{})",
            "  ".repeat(depth),
            node.label,
            node.span.start,
            node.span.end
        );
    });
    out
}

fn for_each_depth(node: &AstNode, depth: usize, f: &mut impl FnMut(&AstNode, usize)) {
    f(node, depth);
    for c in &node.children {
        for_each_depth(c, depth + 1, f);
    }
}

/// Binary-tree dump; `∅` prints as `<nil>` and merged chains as `A|B|label`.
pub fn dump_binary(bt: &BinaryNode) -> String {
    let mut out = String::new();
    dump_binary_into(bt, 0, &mut out);
    out
}

fn dump_binary_into(node: &BinaryNode, depth: usize, out: &mut String) {
    let span = node.span();
    let _ = writeln!(
        out,
        "{}{} [{},{})",
        "  ".repeat(depth),
        node.composite_label(),
        span.start,
        span.end
    );
    if let BinaryNode::Internal { left, right, .. } = node {
        dump_binary_into(left, depth + 1, out);
        dump_binary_into(right, depth + 1, out);
    }
}
