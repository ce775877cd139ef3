//! Syntax-augmented traversal.
//!
//! Walks a syntax tree in pre-order and wraps the tokens of every internal
//! node in XML-like tags named after the node kind, e.g.
//! `<mod> <ret> return 1 </ret> </mod>`. String literals are replaced by a
//! placeholder; their original text goes to a side table so the traversal
//! can be reverted exactly.

use std::collections::BTreeSet;
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::Grammar;
use crate::tree::SyntaxNode;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SatToken {
    Open(String),
    Close(String),
    Leaf(String),
}

impl SatToken {
    pub fn is_tag(&self) -> bool {
        !matches!(self, SatToken::Leaf(_))
    }
}

impl fmt::Display for SatToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SatToken::Open(t) => write!(f, "<{t}>"),
            SatToken::Close(t) => write!(f, "</{t}>"),
            SatToken::Leaf(t) => f.write_str(t),
        }
    }
}

/// How much of a node kind goes into its tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagLength {
    Full,
    Prefix(usize),
}

impl TagLength {
    pub fn apply<'a>(&self, kind: &'a str) -> &'a str {
        match *self {
            TagLength::Full => kind,
            TagLength::Prefix(n) => match kind.char_indices().nth(n) {
                Some((idx, _)) => &kind[..idx],
                None => kind,
            },
        }
    }
}

impl Default for TagLength {
    fn default() -> Self {
        TagLength::Prefix(3)
    }
}

impl Serialize for TagLength {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TagLength::Full => s.serialize_str("full"),
            TagLength::Prefix(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for TagLength {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Len(u64),
        }
        match Raw::deserialize(d)? {
            Raw::Name(s) if s == "full" => Ok(TagLength::Full),
            Raw::Name(s) => s
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .map(TagLength::Prefix)
                .ok_or_else(|| de::Error::custom(format!("invalid tag length `{s}`"))),
            Raw::Len(0) => Err(de::Error::custom("tag length must be positive")),
            Raw::Len(n) => Ok(TagLength::Prefix(n as usize)),
        }
    }
}

impl std::str::FromStr for TagLength {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(TagLength::Full);
        }
        s.parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(TagLength::Prefix)
            .ok_or_else(|| Error::Argument(format!("invalid tag length `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagPolicy {
    #[serde(default)]
    pub tag_length: TagLength,
    #[serde(default = "default_placeholder")]
    pub placeholder: String,
    #[serde(default)]
    pub identifier_kinds: BTreeSet<String>,
    #[serde(default)]
    pub string_kinds: BTreeSet<String>,
}

fn default_placeholder() -> String {
    "STR".to_string()
}

impl TagPolicy {
    pub fn for_grammar(grammar: Grammar) -> Self {
        let (ids, strs): (&[&str], &[&str]) = match grammar {
            Grammar::Python => (&["identifier"], &["string", "string_content"]),
            Grammar::Java => (&["identifier"], &["string_literal", "string_fragment"]),
        };
        Self {
            tag_length: TagLength::default(),
            placeholder: default_placeholder(),
            identifier_kinds: ids.iter().map(|s| s.to_string()).collect(),
            string_kinds: strs.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_tag_length(mut self, tag_length: TagLength) -> Self {
        self.tag_length = tag_length;
        self
    }

    pub fn tag<'a>(&self, kind: &'a str) -> &'a str {
        self.tag_length.apply(kind)
    }

    /// Whether a leaf's text is hidden behind the placeholder.
    pub fn masks(&self, leaf: &SyntaxNode) -> bool {
        let value = leaf.value().unwrap_or("");
        if self.string_kinds.contains(leaf.kind()) {
            return true;
        }
        self.identifier_kinds.contains(leaf.kind()) && is_quoted_literal(value)
    }
}

impl Default for TagPolicy {
    fn default() -> Self {
        Self::for_grammar(Grammar::Python)
    }
}

fn is_quoted_literal(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() >= 2 && matches!(b[0], b'"' | b'\'') && b[b.len() - 1] == b[0]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SatSequence {
    pub tokens: Vec<SatToken>,
    pub string_table: Vec<String>,
    pub tag_length: TagLength,
    #[serde(default = "default_placeholder")]
    pub placeholder: String,
}

impl SatSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn placeholder_count(&self) -> usize {
        self.tokens
            .iter()
            .filter(|t| matches!(t, SatToken::Leaf(s) if *s == self.placeholder))
            .count()
    }

    /// Checks proper nesting of tags.
    pub fn check_balance(&self) -> Result<()> {
        let mut stack: Vec<&str> = Vec::new();
        for (i, t) in self.tokens.iter().enumerate() {
            match t {
                SatToken::Open(tag) => stack.push(tag),
                SatToken::Close(tag) => match stack.pop() {
                    Some(open) if open == tag => {}
                    Some(open) => return Err(Error::Unbalanced(format!("token {i}: </{tag}> closes <{open}>"))),
                    None => return Err(Error::Unbalanced(format!("token {i}: </{tag}> without opening tag"))),
                },
                SatToken::Leaf(_) => {}
            }
        }
        match stack.last() {
            None => Ok(()),
            Some(open) => Err(Error::Unbalanced(format!(
                "{} unclosed tag(s), innermost <{open}>",
                stack.len()
            ))),
        }
    }
}

/// Pre-order traversal emitting tags around internal nodes and leaf values
/// (or the placeholder) for leaves. Leaves with empty text emit nothing.
pub fn sat_encode(tree: &SyntaxNode, policy: &TagPolicy) -> SatSequence {
    let mut seq = SatSequence {
        tokens: Vec::with_capacity(tree.node_count() * 2),
        string_table: Vec::new(),
        tag_length: policy.tag_length,
        placeholder: policy.placeholder.clone(),
    };
    encode_into(tree, policy, &mut seq);
    seq
}

fn encode_into(node: &SyntaxNode, policy: &TagPolicy, seq: &mut SatSequence) {
    if node.is_leaf() {
        let value = node.value().unwrap_or("");
        if value.is_empty() {
            return;
        }
        // a literal leaf spelled like the placeholder is also routed through
        // the table so decoding stays unambiguous
        if policy.masks(node) || value == policy.placeholder {
            seq.string_table.push(value.to_string());
            seq.tokens.push(SatToken::Leaf(policy.placeholder.clone()));
        } else {
            seq.tokens.push(SatToken::Leaf(value.to_string()));
        }
        return;
    }
    let tag = policy.tag(node.kind()).to_string();
    seq.tokens.push(SatToken::Open(tag.clone()));
    for c in node.children() {
        encode_into(c, policy, seq);
    }
    seq.tokens.push(SatToken::Close(tag));
}

/// Drops tags and restores placeholders from the string table.
pub fn sat_decode(seq: &SatSequence) -> Result<Vec<String>> {
    seq.check_balance()?;
    let placeholders = seq.placeholder_count();
    if placeholders != seq.string_table.len() {
        return Err(Error::StringTableMismatch {
            placeholders,
            table: seq.string_table.len(),
        });
    }
    let mut table = seq.string_table.iter();
    Ok(seq
        .tokens
        .iter()
        .filter_map(|t| match t {
            SatToken::Leaf(s) if *s == seq.placeholder => table.next().cloned(),
            SatToken::Leaf(s) => Some(s.clone()),
            _ => None,
        })
        .collect())
}

/// Like [`sat_decode`] but leaves placeholders in place; for model output,
/// which carries no string table.
pub fn strip_tags(seq: &SatSequence) -> Result<Vec<String>> {
    seq.check_balance()?;
    Ok(seq
        .tokens
        .iter()
        .filter_map(|t| match t {
            SatToken::Leaf(s) => Some(s.clone()),
            _ => None,
        })
        .collect())
}

/// Single-space-joined surface form.
pub fn render(seq: &SatSequence) -> String {
    let mut out = String::new();
    for (i, t) in seq.tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&t.to_string());
    }
    out
}

fn tag_body(s: &str) -> Option<&str> {
    let inner = s.strip_prefix('<')?.strip_suffix('>')?;
    (!inner.is_empty() && !inner.contains(['<', '>'])).then_some(inner)
}

/// Classifies whitespace-separated tokens as `<tag>`, `</tag>` or leaves.
pub fn parse_rendered(text: &str) -> SatSequence {
    parse_rendered_with(text, &TagPolicy::default())
}

pub fn parse_rendered_with(text: &str, policy: &TagPolicy) -> SatSequence {
    let tokens = text
        .split_whitespace()
        .map(|w| match tag_body(w) {
            Some(inner) => match inner.strip_prefix('/') {
                Some(close) if !close.is_empty() => SatToken::Close(close.to_string()),
                Some(_) => SatToken::Leaf(w.to_string()),
                None => SatToken::Open(inner.to_string()),
            },
            None => SatToken::Leaf(w.to_string()),
        })
        .collect();
    SatSequence {
        tokens,
        string_table: Vec::new(),
        tag_length: policy.tag_length,
        placeholder: policy.placeholder.clone(),
    }
}

/// Rebuilds source text by placing `values` (one per leaf, in leaf order) at
/// the leaves' recorded spans. Gaps between leaves are reproduced as line
/// breaks and spaces.
pub fn reconstruct_source<S: AsRef<str>>(tree: &SyntaxNode, values: &[S]) -> Result<String> {
    let leaves: Vec<&SyntaxNode> = tree.leaves().filter(|l| !l.value().unwrap_or("").is_empty()).collect();
    if leaves.len() != values.len() {
        return Err(Error::Argument(format!(
            "{} values for {} leaves",
            values.len(),
            leaves.len()
        )));
    }
    let mut out = String::new();
    let (mut row, mut col) = (0usize, 0usize);
    for (leaf, value) in leaves.iter().zip(values) {
        let span = leaf.span();
        while row < span.start.row {
            out.push('\n');
            row += 1;
            col = 0;
        }
        if span.start.col > col {
            out.extend(std::iter::repeat_n(' ', span.start.col - col));
        } else if !out.is_empty() && !out.ends_with('\n') && span.start.col < col {
            out.push(' ');
        }
        out.push_str(value.as_ref());
        row = span.end.row;
        col = span.end.col;
    }
    Ok(out)
}
