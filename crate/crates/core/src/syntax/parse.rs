use tree_sitter::{Node, Parser};

use super::{AstNode, Span};
use crate::corpus::LineIndex;
use crate::{Error, Result};

/// A grammar that turns source text into a concrete syntax tree.
///
/// Backends must agree on the node-label vocabulary: named nodes carry their
/// grammar symbol, anonymous tokens carry their literal text.
pub trait GrammarBackend {
    fn language(&self) -> &'static str;
    fn parse(&self, code: &str) -> Result<AstNode>;
}

/// Python through the tree-sitter grammar.
///
/// Comments and other `extra` nodes are dropped. Non-terminal spans are
/// normalized to the hull of their children so that a tree rebuilt from its
/// leaves is equal to the parsed one.
#[derive(Debug, Default, Clone, Copy)]
pub struct TreeSitterPython;

impl GrammarBackend for TreeSitterPython {
    fn language(&self) -> &'static str {
        "python"
    }

    fn parse(&self, code: &str) -> Result<AstNode> {
        let mut parser = Parser::new();
        parser
            .set_language(&tree_sitter_python::LANGUAGE.into())
            .map_err(|e| Error::UnsupportedLanguage(format!("python: {e}")))?;
        let tree = parser
            .parse(code, None)
            .ok_or_else(|| Error::UnsupportedLanguage("python: parser returned no tree".into()))?;
        let root = tree.root_node();
        if root.has_error() {
            let offset = first_error(root).unwrap_or(root.start_byte());
            let index = LineIndex::new(code);
            let line = index.line_of(offset.min(code.len())).unwrap_or(1);
            let column = offset - index.line_start(line).unwrap_or(0) + 1;
            return Err(Error::Syntax { offset, line, column });
        }
        let children = convert_children(root);
        Ok(AstNode::internal(root.kind(), children))
    }
}

fn first_error(node: Node<'_>) -> Option<usize> {
    if node.is_error() || node.is_missing() {
        return Some(node.start_byte());
    }
    let mut cursor = node.walk();
    let found = node
        .children(&mut cursor)
        .filter(|c| c.has_error() || c.is_missing())
        .find_map(first_error);
    found
}

fn convert_children(node: Node<'_>) -> Vec<AstNode> {
    let mut cursor = node.walk();
    node.children(&mut cursor)
        .filter(|c| !c.is_extra())
        .filter_map(convert)
        .collect()
}

fn convert(node: Node<'_>) -> Option<AstNode> {
    if node.child_count() == 0 {
        let span = Span::new(node.start_byte(), node.end_byte());
        // zero-width tokens carry no source bytes to attach hidden vectors to
        return (!span.is_empty()).then(|| AstNode::terminal(node.kind(), span));
    }
    let children = convert_children(node);
    (!children.is_empty()).then(|| AstNode::internal(node.kind(), children))
}

/// Parses `code` with the grammar registered for `lang`.
pub fn parse_source(code: &str, lang: &str) -> Result<AstNode> {
    match lang {
        "python" | "py" => TreeSitterPython.parse(code),
        other => Err(Error::UnsupportedLanguage(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(code: &str, ast: &AstNode) -> Vec<String> {
        ast.terminals()
            .iter()
            .map(|t| code[t.span.start..t.span.end].to_string())
            .collect()
    }

    #[test]
    fn pass_statement_chain() {
        let ast = parse_source("pass\n", "python").unwrap();
        assert_eq!(ast.label, "module");
        assert_eq!(ast.children.len(), 1);
        let stmt = &ast.children[0];
        assert_eq!(stmt.label, "pass_statement");
        assert_eq!(stmt.children.len(), 1);
        assert!(stmt.children[0].is_terminal);
        assert_eq!(stmt.children[0].label, "pass");
    }

    #[test]
    fn empty_program_is_a_bare_module() {
        let ast = parse_source("", "python").unwrap();
        assert_eq!(ast.label, "module");
        assert!(ast.children.is_empty());
        assert!(!ast.is_terminal);
        assert!(ast.terminals().is_empty());
    }

    #[test]
    fn if_statement_is_recognized() {
        let ast = parse_source("if x:\n y=1\n", "python").unwrap();
        assert!(ast.preorder().any(|n| n.label == "if_statement"));
        ast.validate().unwrap();
    }

    #[test]
    fn terminals_follow_source_order() {
        let code = "x=1\n";
        let ast = parse_source(code, "python").unwrap();
        assert_eq!(texts(code, &ast), ["x", "=", "1"]);
        let labels: Vec<_> = ast.terminals().into_iter().map(|t| t.label).collect();
        assert_eq!(labels, ["identifier", "=", "integer"]);
    }

    #[test]
    fn comments_are_dropped() {
        let code = "x = 1  # note\n";
        let ast = parse_source(code, "python").unwrap();
        assert_eq!(texts(code, &ast), ["x", "=", "1"]);
    }

    #[test]
    fn syntax_errors_report_position() {
        let err = parse_source("x = 1\ny = (2\n", "python").unwrap_err();
        match err {
            Error::Syntax { line, .. } => assert!(line >= 2, "line {line}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_language_is_rejected() {
        assert!(matches!(parse_source("x", "cobol"), Err(Error::UnsupportedLanguage(_))));
    }
}
