//! Concrete syntax trees and the JSON tree interchange format.
//!
//! A [`SyntaxNode`] is either a leaf carrying source text or an internal node
//! with at least one child. Trees arrive either as interchange documents
//! (`{"kind", "named", "value"?, "start"?, "end"?, "children"?}`) or from the
//! embedded parsers in [`crate::grammar`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Zero-based `(row, byte column)` position. Orders lexicographically.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourcePoint {
    pub row: usize,
    pub col: usize,
}

impl SourcePoint {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: SourcePoint,
    pub end: SourcePoint,
}

impl Span {
    pub const fn new(start: SourcePoint, end: SourcePoint) -> Self {
        Self { start, end }
    }

    fn is_unset(&self) -> bool {
        *self == Span::default()
    }

    fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

/// A node of a concrete syntax tree.
///
/// Leaves carry a value and have no children; internal nodes carry no value
/// and have at least one child. The kind is never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SyntaxNode {
    kind: String,
    value: Option<String>,
    named: bool,
    span: Span,
    children: Vec<SyntaxNode>,
}

impl SyntaxNode {
    /// Builds a leaf. Panics if `kind` is empty.
    pub fn leaf(kind: impl Into<String>, value: impl Into<String>) -> Self {
        let kind = kind.into();
        assert!(!kind.is_empty(), "node kind must not be empty");
        Self {
            kind,
            value: Some(value.into()),
            named: true,
            span: Span::default(),
            children: Vec::new(),
        }
    }

    /// Builds an internal node. Fails if `children` is empty or `kind` is empty.
    pub fn internal(kind: impl Into<String>, children: Vec<SyntaxNode>) -> Result<Self> {
        let kind = kind.into();
        if kind.is_empty() {
            return Err(Error::Structure {
                path: "$".into(),
                message: "empty kind".into(),
            });
        }
        if children.is_empty() {
            return Err(Error::Structure {
                path: "$".into(),
                message: format!("internal node `{kind}` has no children"),
            });
        }
        Ok(Self {
            kind,
            value: None,
            named: true,
            span: Span::default(),
            children,
        })
    }

    pub fn with_named(mut self, named: bool) -> Self {
        self.named = named;
        self
    }

    pub fn with_span(mut self, span: Span) -> Self {
        self.span = span;
        self
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    /// Leaf text; `None` for internal nodes.
    pub fn value(&self) -> Option<&str> {
        self.value.as_deref()
    }

    pub fn is_named(&self) -> bool {
        self.named
    }

    pub fn span(&self) -> Span {
        self.span
    }

    pub fn children(&self) -> &[SyntaxNode] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Pre-order iterator over every node.
    pub fn iter(&self) -> PreOrder<'_> {
        PreOrder { stack: vec![self] }
    }

    pub fn node_count(&self) -> usize {
        self.iter().count()
    }

    pub fn leaf_count(&self) -> usize {
        self.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn internal_count(&self) -> usize {
        self.iter().filter(|n| !n.is_leaf()).count()
    }

    /// Leaves in source order as `(kind, value)` pairs.
    pub fn leaf_tokens(&self) -> Vec<(&str, &str)> {
        self.leaves()
            .map(|n| (n.kind.as_str(), n.value.as_deref().unwrap_or("")))
            .collect()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &SyntaxNode> {
        self.iter().filter(|n| n.is_leaf())
    }

    /// Leaf values in source order.
    pub fn leaf_values(&self) -> Vec<&str> {
        self.leaves().map(|n| n.value.as_deref().unwrap_or("")).collect()
    }

    /// True if any node's kind is one of the default error sentinels.
    pub fn has_error(&self) -> bool {
        self.has_error_with(&ErrorSentinels::default())
    }

    pub fn has_error_with(&self, sentinels: &ErrorSentinels) -> bool {
        self.iter().any(|n| sentinels.contains(&n.kind))
    }

    /// S-expression over named nodes only, leaf values excluded. This is the
    /// subtree shape compared by syntax matching.
    pub fn shape_sexp(&self) -> String {
        let mut out = String::new();
        self.write_shape(&mut out);
        out
    }

    fn write_shape(&self, out: &mut String) {
        out.push('(');
        out.push_str(&self.kind);
        for c in self.children.iter() {
            if c.named {
                out.push(' ');
                c.write_shape(out);
            } else {
                // anonymous subtrees may still contain named descendants
                for g in c.children.iter().filter(|g| g.named) {
                    out.push(' ');
                    g.write_shape(out);
                }
            }
        }
        out.push(')');
    }

    /// Parses an interchange document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::TreeFormat {
            path: "$".into(),
            message: e.to_string(),
        })?;
        ingest_tree(&value)
    }

    /// Serializes into the interchange format.
    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("kind".into(), Value::String(self.kind.clone()));
        map.insert("named".into(), Value::Bool(self.named));
        if let Some(v) = &self.value {
            map.insert("value".into(), Value::String(v.clone()));
        }
        if !self.span.is_unset() {
            map.insert(
                "start".into(),
                serde_json::json!([self.span.start.row, self.span.start.col]),
            );
            map.insert("end".into(), serde_json::json!([self.span.end.row, self.span.end.col]));
        }
        if !self.children.is_empty() {
            map.insert(
                "children".into(),
                Value::Array(self.children.iter().map(|c| c.to_json()).collect()),
            );
        }
        Value::Object(map)
    }
}

impl fmt::Display for SyntaxNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            Some(v) => write!(f, "({} {:?})", self.kind, v),
            None => {
                write!(f, "({}", self.kind)?;
                for c in &self.children {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

pub struct PreOrder<'a> {
    stack: Vec<&'a SyntaxNode>,
}

impl<'a> Iterator for PreOrder<'a> {
    type Item = &'a SyntaxNode;

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

/// Node kinds that mark a parse failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorSentinels(BTreeSet<String>);

impl ErrorSentinels {
    pub fn new<I, S>(kinds: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(kinds.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.0.contains(kind)
    }
}

impl Default for ErrorSentinels {
    fn default() -> Self {
        Self::new(["ERROR", "MISSING"])
    }
}

/// Builds a tree from an interchange document, validating every invariant.
pub fn ingest_tree(doc: &Value) -> Result<SyntaxNode> {
    ingest_at(doc, "$")
}

fn format_err(path: &str, message: impl Into<String>) -> Error {
    Error::TreeFormat {
        path: path.to_string(),
        message: message.into(),
    }
}

fn parse_point(v: &Value, path: &str) -> Result<SourcePoint> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| format_err(path, "expected [row, col]"))?;
    let get = |i: usize| {
        arr[i]
            .as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| format_err(path, "row/col must be non-negative integers"))
    };
    Ok(SourcePoint::new(get(0)?, get(1)?))
}

fn ingest_at(doc: &Value, path: &str) -> Result<SyntaxNode> {
    let obj = doc.as_object().ok_or_else(|| format_err(path, "expected an object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "kind" | "named" | "value" | "start" | "end" | "children") {
            return Err(format_err(path, format!("unknown field `{key}`")));
        }
    }
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| format_err(path, "missing string field `kind`"))?;
    if kind.is_empty() {
        return Err(Error::Structure {
            path: path.into(),
            message: "empty kind".into(),
        });
    }
    let named = match obj.get("named") {
        None => true,
        Some(v) => v
            .as_bool()
            .ok_or_else(|| format_err(path, "`named` must be a boolean"))?,
    };
    let value = match obj.get("value") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_str()
                .ok_or_else(|| format_err(path, "`value` must be a string"))?
                .to_string(),
        ),
    };
    let span = match (obj.get("start"), obj.get("end")) {
        (None, None) => Span::default(),
        (Some(s), Some(e)) => {
            let span = Span::new(
                parse_point(s, &format!("{path}.start"))?,
                parse_point(e, &format!("{path}.end"))?,
            );
            if span.start > span.end {
                return Err(Error::Structure {
                    path: path.into(),
                    message: "span start after end".into(),
                });
            }
            span
        }
        _ => return Err(format_err(path, "`start` and `end` must appear together")),
    };
    let raw_children = match obj.get("children") {
        None | Some(Value::Null) => &[][..],
        Some(Value::Array(a)) => a.as_slice(),
        Some(_) => return Err(format_err(path, "`children` must be an array")),
    };
    if value.is_some() && !raw_children.is_empty() {
        return Err(Error::Structure {
            path: path.into(),
            message: "node has both `value` and `children`".into(),
        });
    }

    let mut children = Vec::with_capacity(raw_children.len());
    for (i, c) in raw_children.iter().enumerate() {
        children.push(ingest_at(c, &format!("{path}.children[{i}]"))?);
    }
    let mut prev_end: Option<SourcePoint> = None;
    for (i, c) in children.iter().enumerate() {
        if c.span.is_unset() || span.is_unset() {
            continue;
        }
        if !span.contains(&c.span) {
            return Err(Error::Structure {
                path: format!("{path}.children[{i}]"),
                message: "child span outside parent span".into(),
            });
        }
        if let Some(end) = prev_end {
            if c.span.start < end {
                return Err(Error::Structure {
                    path: format!("{path}.children[{i}]"),
                    message: "child spans out of order".into(),
                });
            }
        }
        prev_end = Some(c.span.end);
    }

    let value = if children.is_empty() {
        Some(value.unwrap_or_default())
    } else {
        None
    };
    Ok(SyntaxNode {
        kind: kind.to_string(),
        value,
        named,
        span,
        children,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn return_one() -> Value {
        json!({"kind": "module", "start": [0, 0], "end": [0, 8], "children": [
            {"kind": "return_statement", "start": [0, 0], "end": [0, 8], "children": [
                {"kind": "return", "named": false, "value": "return", "start": [0, 0], "end": [0, 6]},
                {"kind": "integer", "value": "1", "start": [0, 7], "end": [0, 8]}
            ]}
        ]})
    }

    #[test]
    fn minimal_document_is_single_leaf() {
        let t = ingest_tree(&json!({"kind": "module", "children": []})).unwrap();
        assert!(t.is_leaf());
        assert_eq!(t.kind(), "module");
        assert_eq!(t.value(), Some(""));
        assert_eq!(t.leaf_tokens(), vec![("module", "")]);
    }

    #[test]
    fn return_statement_counts() {
        let t = ingest_tree(&return_one()).unwrap();
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.leaf_count(), 2);
        assert_eq!(t.leaf_tokens(), vec![("return", "return"), ("integer", "1")]);
        assert!(!t.has_error());
    }

    #[test]
    fn value_and_children_is_structural_error() {
        let doc = json!({"kind": "x", "value": "v", "children": [{"kind": "y", "value": "z"}]});
        let err = ingest_tree(&doc).unwrap_err();
        assert!(matches!(err, Error::Structure { .. }), "{err}");
    }

    #[test]
    fn malformed_document_names_path() {
        let doc = json!({"kind": "m", "children": [{"kind": "a", "value": "1"}, {"value": "2"}]});
        match ingest_tree(&doc).unwrap_err() {
            Error::TreeFormat { path, .. } => assert_eq!(path, "$.children[1]"),
            e => panic!("unexpected {e}"),
        }
        let doc = json!({"kind": "m", "children": [{"kind": "a", "value": 3}]});
        assert!(matches!(ingest_tree(&doc).unwrap_err(), Error::TreeFormat { .. }));
    }

    #[test]
    fn empty_kind_rejected() {
        assert!(ingest_tree(&json!({"kind": "", "value": "a"})).is_err());
    }

    #[test]
    fn child_span_outside_parent_rejected() {
        let doc = json!({"kind": "m", "start": [0, 0], "end": [0, 2], "children": [
            {"kind": "a", "value": "abc", "start": [0, 0], "end": [0, 3]}
        ]});
        assert!(matches!(ingest_tree(&doc).unwrap_err(), Error::Structure { .. }));
    }

    #[test]
    fn error_sentinels() {
        let t = SyntaxNode::internal(
            "module",
            vec![SyntaxNode::internal("ERROR", vec![SyntaxNode::leaf("(", "(")]).unwrap()],
        )
        .unwrap();
        assert!(t.has_error());
        assert!(!SyntaxNode::leaf("identifier", "x").has_error());
        let custom = ErrorSentinels::new(["BAD"]);
        assert!(!t.has_error_with(&custom));
    }

    #[test]
    fn reserialize_is_structurally_equal() {
        let doc = return_one();
        let t = ingest_tree(&doc).unwrap();
        let again = ingest_tree(&t.to_json()).unwrap();
        assert_eq!(t, again);
        let mut expected = doc.clone();
        // serializer always writes `named`
        expected["named"] = json!(true);
        expected["children"][0]["named"] = json!(true);
        expected["children"][0]["children"][1]["named"] = json!(true);
        assert_eq!(t.to_json(), expected);
    }

    #[test]
    fn shape_sexp_skips_anonymous_and_values() {
        let t = ingest_tree(&return_one()).unwrap();
        assert_eq!(t.shape_sexp(), "(module (return_statement (integer)))");
    }
}
