//! Embedded grammar-driven parsers (tree-sitter) and language-aware code
//! tokenization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{SourcePoint, Span, SyntaxNode};

pub const NEWLINE: &str = "NEWLINE";
pub const INDENT: &str = "INDENT";
pub const DEDENT: &str = "DEDENT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grammar {
    Python,
    Java,
}

impl Grammar {
    pub fn id(self) -> &'static str {
        match self {
            Grammar::Python => "python",
            Grammar::Java => "java",
        }
    }

    fn language(self) -> tree_sitter::Language {
        match self {
            Grammar::Python => tree_sitter_python::LANGUAGE.into(),
            Grammar::Java => tree_sitter_java::LANGUAGE.into(),
        }
    }

    /// Nodes kept as a single leaf even when the grammar gives them children.
    fn flattened(self, kind: &str) -> bool {
        match self {
            Grammar::Python => kind == "string_content",
            Grammar::Java => false,
        }
    }

    fn is_comment(kind: &str) -> bool {
        matches!(kind, "comment" | "line_comment" | "block_comment")
    }

    /// Parses `source` into a [`SyntaxNode`]. Comments and zero-width tokens
    /// are dropped; missing tokens become `MISSING` leaves.
    pub fn parse(self, source: &str) -> Result<SyntaxNode> {
        let mut parser = tree_sitter::Parser::new();
        parser
            .set_language(&self.language())
            .map_err(|e| Error::Parser(e.to_string()))?;
        let tree = parser
            .parse(source, None)
            .ok_or_else(|| Error::Parser("parser returned no tree".into()))?;
        let root = tree.root_node();
        Ok(self
            .convert(root, source)
            .unwrap_or_else(|| SyntaxNode::leaf(root.kind(), "").with_span(span_of(&root))))
    }

    fn convert(self, node: tree_sitter::Node<'_>, source: &str) -> Option<SyntaxNode> {
        let kind = node.kind();
        let span = span_of(&node);
        let text = &source[node.byte_range()];
        if node.is_missing() {
            return Some(SyntaxNode::leaf("MISSING", kind).with_span(span));
        }
        if node.is_extra() && Self::is_comment(kind) {
            return None;
        }
        let named = node.is_named();
        if node.child_count() == 0 || self.flattened(kind) {
            if text.is_empty() {
                return if kind == "ERROR" {
                    Some(SyntaxNode::leaf("ERROR", "ERROR").with_span(span))
                } else {
                    None
                };
            }
            return Some(SyntaxNode::leaf(kind, text).with_named(named).with_span(span));
        }
        let mut cursor = node.walk();
        let children: Vec<SyntaxNode> = node
            .children(&mut cursor)
            .filter_map(|c| self.convert(c, source))
            .collect();
        if children.is_empty() {
            if text.trim().is_empty() && kind != "ERROR" {
                return None;
            }
            let value = if text.is_empty() { kind } else { text };
            return Some(SyntaxNode::leaf(kind, value).with_named(named).with_span(span));
        }
        Some(
            SyntaxNode::internal(kind, children)
                .expect("non-empty children")
                .with_named(named)
                .with_span(span),
        )
    }

    /// Code tokens for sequence models: leaf values split on whitespace, with
    /// `NEWLINE`/`INDENT`/`DEDENT` markers for Python layout.
    pub fn code_tokens(self, tree: &SyntaxNode) -> Vec<String> {
        let mut out = Vec::new();
        let mut indents = vec![0usize];
        let mut row: Option<usize> = None;
        for leaf in tree.leaves() {
            let value = leaf.value().unwrap_or("");
            if value.trim().is_empty() {
                continue;
            }
            let start = leaf.span().start;
            if self == Grammar::Python {
                match row {
                    Some(r) if start.row > r => {
                        out.push(NEWLINE.to_string());
                        let top = *indents.last().unwrap();
                        if start.col > top {
                            indents.push(start.col);
                            out.push(INDENT.to_string());
                        } else {
                            while start.col < *indents.last().unwrap() && indents.len() > 1 {
                                indents.pop();
                                out.push(DEDENT.to_string());
                            }
                        }
                    }
                    None if start.col > 0 => {
                        indents.push(start.col);
                        out.push(INDENT.to_string());
                    }
                    _ => {}
                }
                row = Some(leaf.span().end.row.max(start.row));
            }
            out.extend(value.split_whitespace().map(str::to_string));
        }
        out
    }

    /// Inverse of [`Grammar::code_tokens`] up to intra-line spacing: tokens
    /// are joined with single spaces, string literal pieces are glued back
    /// together, and Python layout markers become line breaks and four-space
    /// indentation.
    pub fn detokenize<S: AsRef<str>>(self, tokens: &[S]) -> String {
        match self {
            Grammar::Java => join_tokens(
                &tokens
                    .iter()
                    .map(AsRef::as_ref)
                    .filter(|t| !matches!(*t, NEWLINE | INDENT | DEDENT))
                    .collect::<Vec<_>>(),
            ),
            Grammar::Python => {
                let mut lines: Vec<String> = Vec::new();
                let mut level = 0usize;
                let mut line: Vec<&str> = Vec::new();
                let flush = |line: &mut Vec<&str>, level: usize, lines: &mut Vec<String>| {
                    if !line.is_empty() {
                        lines.push(format!("{}{}", "    ".repeat(level), join_tokens(line.as_slice())));
                        line.clear();
                    }
                };
                for t in tokens.iter().map(AsRef::as_ref) {
                    match t {
                        NEWLINE => flush(&mut line, level, &mut lines),
                        INDENT => {
                            flush(&mut line, level, &mut lines);
                            level += 1;
                        }
                        DEDENT => {
                            flush(&mut line, level, &mut lines);
                            level = level.saturating_sub(1);
                        }
                        _ => line.push(t),
                    }
                }
                flush(&mut line, level, &mut lines);
                lines.join("\n")
            }
        }
    }
}

/// Opening delimiter of a string literal: an optional prefix such as `f` or
/// `rb` followed by quote characters only.
fn string_delimiter(t: &str) -> Option<&str> {
    let quotes = t.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    let is_quotes = !quotes.is_empty() && quotes.chars().all(|c| c == '"' || c == '\'');
    is_quotes.then_some(quotes)
}

/// Joins tokens with single spaces, except inside string literals, whose
/// pieces are glued back together.
fn join_tokens(tokens: &[&str]) -> String {
    let mut out = String::new();
    let mut open: Option<&str> = None;
    let mut glue = false;
    for t in tokens {
        if !out.is_empty() && !glue && open.is_none() {
            out.push(' ');
        }
        out.push_str(t);
        glue = false;
        match open {
            Some(q) if *t == q => open = None,
            Some(_) => {}
            None => {
                if let Some(q) = string_delimiter(t) {
                    open = Some(q);
                    glue = true;
                }
            }
        }
    }
    out
}

fn span_of(node: &tree_sitter::Node<'_>) -> Span {
    let s = node.start_position();
    let e = node.end_position();
    Span::new(SourcePoint::new(s.row, s.column), SourcePoint::new(e.row, e.column))
}

impl FromStr for Grammar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "python" | "py" => Ok(Grammar::Python),
            "java" => Ok(Grammar::Java),
            other => Err(Error::UnknownGrammar(other.to_string())),
        }
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn return_one_shape() {
        let t = Grammar::Python.parse("return 1").unwrap();
        assert_eq!(
            t.to_string(),
            r#"(module (return_statement (return "return") (integer "1")))"#
        );
        assert_eq!(t.node_count(), 4);
        assert!(!t.has_error());
    }

    #[test]
    fn broken_source_has_error() {
        assert!(Grammar::Python.parse("return ((").unwrap().has_error());
        assert!(Grammar::Java.parse("class A { void f( }").unwrap().has_error());
    }

    #[test]
    fn empty_source_is_module_leaf() {
        let t = Grammar::Python.parse("").unwrap();
        assert_eq!(t.kind(), "module");
        assert!(t.is_leaf());
        assert!(!t.has_error());
    }

    #[test]
    fn python_strings_keep_content_as_one_leaf() {
        let t = Grammar::Python.parse("q = \"SELECT a\\n FROM t\"").unwrap();
        let leaves = t.leaf_tokens();
        assert!(leaves.contains(&("string_content", "SELECT a\\n FROM t")), "{leaves:?}");
    }

    #[test]
    fn comments_dropped() {
        let t = Grammar::Python.parse("x = 1  # note").unwrap();
        assert!(t.iter().all(|n| n.kind() != "comment"));
    }

    #[test]
    fn python_layout_roundtrip() {
        let src = "def f(a):\n    if a:\n        return 1\n    return 2\nx = f(3)";
        let t = Grammar::Python.parse(src).unwrap();
        let toks = Grammar::Python.code_tokens(&t);
        let back = Grammar::Python.detokenize(&toks);
        let t2 = Grammar::Python.parse(&back).unwrap();
        assert!(!t2.has_error(), "{back}");
        assert_eq!(t.shape_sexp(), t2.shape_sexp());
        assert_eq!(t.leaf_values(), t2.leaf_values());
    }

    #[test]
    fn unknown_grammar() {
        assert!(matches!(
            "cobol".parse::<Grammar>().unwrap_err(),
            Error::UnknownGrammar(_)
        ));
    }
}
