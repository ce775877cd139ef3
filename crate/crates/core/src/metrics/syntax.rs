//! Tree-based metrics: subtree matching, exact AST+SQL match, and the
//! def-use approximation of data-flow matching.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Grammar, DEDENT, INDENT, NEWLINE};
use crate::tree::SyntaxNode;

use super::bleu::{bleu, weighted_bleu, KeywordWeights};

/// Metric tokens: leaf values split on whitespace, layout markers dropped.
pub fn code_tokens(source: &str, grammar: Grammar) -> Result<Vec<String>> {
    let tree = grammar.parse(source)?;
    Ok(grammar
        .code_tokens(&tree)
        .into_iter()
        .filter(|t| !matches!(t.as_str(), NEWLINE | INDENT | DEDENT))
        .filter(|t| t != "MISSING" && t != "ERROR")
        .collect())
}

fn subtree_shapes(tree: &SyntaxNode) -> Vec<String> {
    tree.iter()
        .filter(|n| !n.is_leaf() && n.is_named())
        .map(SyntaxNode::shape_sexp)
        .collect()
}

/// Fraction of the reference's named internal subtrees whose shape occurs
/// in the candidate. A candidate with parse errors scores 0.
pub fn syntax_match_trees(candidate: &SyntaxNode, reference: &SyntaxNode) -> f64 {
    if candidate.has_error() {
        return 0.0;
    }
    let refs = subtree_shapes(reference);
    if refs.is_empty() {
        return if candidate.shape_sexp() == reference.shape_sexp() {
            1.0
        } else {
            0.0
        };
    }
    let cand: HashSet<String> = subtree_shapes(candidate).into_iter().collect();
    let hits = refs.iter().filter(|s| cand.contains(*s)).count();
    hits as f64 / refs.len() as f64
}

pub fn syntax_match(candidate: &str, reference: &str, grammar: Grammar) -> Result<f64> {
    Ok(syntax_match_trees(
        &grammar.parse(candidate)?,
        &grammar.parse(reference)?,
    ))
}

/// How embedded SQL appears in code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    /// SQL in string literals handed to execution calls.
    NativeSql,
    /// Queries built from ORM method calls.
    Orm,
}

impl std::str::FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native_sql" | "native" => Ok(Style::NativeSql),
            "orm" => Ok(Style::Orm),
            _ => Err(Error::Argument(format!("unknown style `{s}`"))),
        }
    }
}

const STRING_KINDS: &[&str] = &["string", "string_literal", "text_block"];
const CALL_KINDS: &[&str] = &["call", "method_invocation", "object_creation_expression"];

fn is_string(n: &SyntaxNode) -> bool {
    STRING_KINDS.contains(&n.kind())
}

fn string_text(n: &SyntaxNode) -> String {
    if n.is_leaf() {
        return n.value().unwrap_or("").trim_matches(['"', '\'']).to_string();
    }
    n.leaves()
        .filter(|l| matches!(l.kind(), "string_content" | "string_fragment" | "escape_sequence"))
        .filter_map(|l| l.value())
        .collect()
}

fn collect_sql(n: &SyntaxNode, style: Style, in_args: bool, out: &mut Vec<String>) {
    if n.kind() == "argument_list" {
        if style == Style::Orm {
            out.push(n.leaf_values().join(" "));
            return;
        }
        for c in n.children() {
            collect_sql(c, style, true, out);
        }
        return;
    }
    if in_args && style == Style::NativeSql && is_string(n) {
        out.push(string_text(n));
        return;
    }
    // arguments of a nested call belong to that call
    let in_args = in_args && !CALL_KINDS.contains(&n.kind());
    for c in n.children() {
        collect_sql(c, style, in_args, out);
    }
}

/// SQL segments of a tree: string literals passed as call arguments for
/// native style, whole argument lists for ORM style.
pub fn extract_sql(tree: &SyntaxNode, style: Style) -> Vec<String> {
    let mut out = Vec::new();
    collect_sql(tree, style, false, &mut out);
    out
}

const SQL_KEYWORDS: &[&str] = &[
    "select", "from", "where", "and", "or", "not", "insert", "into", "values", "update", "set", "delete", "create",
    "table", "drop", "alter", "join", "inner", "left", "right", "outer", "on", "group", "by", "order", "having",
    "limit", "offset", "as", "distinct", "count", "sum", "avg", "min", "max", "in", "like", "between", "is", "null",
    "asc", "desc", "union", "all", "exists", "case", "when", "then", "else", "end", "primary", "key", "index", "with",
    "default",
];

/// Splits on whitespace and punctuation, lowercases SQL keywords and joins
/// with single spaces.
pub fn normalize_sql(sql: &str) -> String {
    let mut toks: Vec<String> = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, toks: &mut Vec<String>| {
        if !cur.is_empty() {
            let lower = cur.to_ascii_lowercase();
            toks.push(if SQL_KEYWORDS.contains(&lower.as_str()) {
                lower
            } else {
                std::mem::take(cur)
            });
            cur.clear();
        }
    };
    for ch in sql.chars() {
        if ch.is_whitespace() {
            flush(&mut cur, &mut toks);
        } else if "(),;=<>*+-/!".contains(ch) {
            flush(&mut cur, &mut toks);
            toks.push(ch.to_string());
        } else {
            cur.push(ch);
        }
    }
    flush(&mut cur, &mut toks);
    toks.join(" ")
}

fn structure_key(n: &SyntaxNode, out: &mut String) {
    out.push('(');
    out.push_str(n.kind());
    if is_string(n) {
        out.push_str(" STR)");
        return;
    }
    if let Some(v) = n.value() {
        out.push(' ');
        out.extend(v.chars().filter(|c| !c.is_whitespace()));
    }
    for c in n.children() {
        structure_key(c, out);
    }
    out.push(')');
}

/// 1 iff the trees agree on structure and leaf values (whitespace ignored,
/// string literals aside) and their normalized SQL segments are equal.
pub fn syntax_exact_match(candidate: &str, reference: &str, grammar: Grammar, style: Style) -> Result<f64> {
    let c = grammar.parse(candidate)?;
    let r = grammar.parse(reference)?;
    if c.has_error() || r.has_error() {
        return Ok(0.0);
    }
    let (mut kc, mut kr) = (String::new(), String::new());
    structure_key(&c, &mut kc);
    structure_key(&r, &mut kr);
    if kc != kr {
        return Ok(0.0);
    }
    let norm = |t: &SyntaxNode| {
        extract_sql(t, style)
            .iter()
            .map(|s| normalize_sql(s))
            .collect::<Vec<_>>()
    };
    Ok(if norm(&c) == norm(&r) { 1.0 } else { 0.0 })
}

/// A def-use edge: a variable (renamed by first definition order) and the
/// kind of the node that uses it.
pub type DefUseEdge = (String, String);

const TARGET_PARENTS: &[&str] = &[
    "assignment",
    "augmented_assignment",
    "assignment_expression",
    "variable_declarator",
    "named_expression",
];
const PATTERN_KINDS: &[&str] = &["pattern_list", "tuple_pattern", "list_pattern", "identifier"];
const PARAM_PARENTS: &[&str] = &[
    "parameters",
    "lambda_parameters",
    "default_parameter",
    "typed_parameter",
    "typed_default_parameter",
    "formal_parameter",
    "catch_formal_parameter",
];

fn first_named(children: &[SyntaxNode]) -> Option<usize> {
    children.iter().position(|c| c.is_named())
}

fn walk_defuse<'a>(
    n: &'a SyntaxNode,
    parent: &str,
    defining: bool,
    defined: &mut HashMap<&'a str, usize>,
    edges: &mut Vec<DefUseEdge>,
) {
    if n.kind() == "identifier" {
        let name = n.value().unwrap_or("");
        if defining || PARAM_PARENTS.contains(&parent) {
            let next = defined.len();
            defined.entry(name).or_insert(next);
        } else if let Some(i) = defined.get(name) {
            edges.push((format!("var_{i}"), parent.to_string()));
        }
        return;
    }
    let kids = n.children();
    let target = if TARGET_PARENTS.contains(&n.kind()) {
        first_named(kids)
    } else if matches!(n.kind(), "for_statement" | "for_in_clause" | "enhanced_for_statement") {
        // `for x in xs` / `for (T x : xs)`: the loop variable is the first
        // bare identifier or pattern among the children
        kids.iter()
            .enumerate()
            .filter(|(_, c)| PATTERN_KINDS.contains(&c.kind()))
            .map(|(i, _)| i)
            .next()
    } else {
        None
    };
    for (i, c) in kids.iter().enumerate() {
        let def_here = Some(i) == target && PATTERN_KINDS.contains(&c.kind());
        walk_defuse(c, n.kind(), defining || def_here, defined, edges);
    }
}

/// Def-use edges in source order: every use of a previously defined name.
pub fn def_use_edges(tree: &SyntaxNode) -> Vec<DefUseEdge> {
    let mut defined = HashMap::new();
    let mut edges = Vec::new();
    walk_defuse(tree, "", false, &mut defined, &mut edges);
    edges
}

/// Fraction of reference def-use edges found in the candidate (multiset
/// matching); `None` when the reference has no edges.
pub fn dataflow_match_trees(candidate: &SyntaxNode, reference: &SyntaxNode) -> Option<f64> {
    let refs = def_use_edges(reference);
    if refs.is_empty() {
        return None;
    }
    let mut pool: HashMap<DefUseEdge, usize> = HashMap::new();
    for e in def_use_edges(candidate) {
        *pool.entry(e).or_insert(0) += 1;
    }
    let mut hits = 0;
    for e in &refs {
        if let Some(c) = pool.get_mut(e) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    Some(hits as f64 / refs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuWeights {
    pub bleu: f64,
    pub weighted_bleu: f64,
    pub syntax_match: f64,
    pub dataflow_match: f64,
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        Self {
            bleu: 0.25,
            weighted_bleu: 0.25,
            syntax_match: 0.25,
            dataflow_match: 0.25,
        }
    }
}

impl CodeBleuWeights {
    pub fn new(bleu: f64, weighted_bleu: f64, syntax_match: f64, dataflow_match: f64) -> Result<Self> {
        let w = Self {
            bleu,
            weighted_bleu,
            syntax_match,
            dataflow_match,
        };
        let all = [bleu, weighted_bleu, syntax_match, dataflow_match];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(
                "CodeBLEU weights must be non-negative and sum to 1".into(),
            ));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodeBleu {
    pub score: f64,
    pub bleu: f64,
    pub weighted_bleu: f64,
    pub syntax_match: f64,
    /// Def-use approximation; `None` when the reference has no edges.
    pub dataflow_match: Option<f64>,
    /// The data-flow weight was spread over the other components.
    pub dataflow_redistributed: bool,
}

pub fn code_bleu(
    candidate: &str,
    reference: &str,
    grammar: Grammar,
    weights: &CodeBleuWeights,
    keywords: &KeywordWeights,
) -> Result<CodeBleu> {
    let ct = grammar.parse(candidate)?;
    let rt = grammar.parse(reference)?;
    let toks = |t: &SyntaxNode| -> Vec<String> {
        grammar
            .code_tokens(t)
            .into_iter()
            .filter(|t| !matches!(t.as_str(), NEWLINE | INDENT | DEDENT | "MISSING" | "ERROR"))
            .collect()
    };
    let (c, r) = (toks(&ct), toks(&rt));
    let b = bleu(&c, &r);
    let wb = weighted_bleu(&c, &r, keywords);
    let sm = syntax_match_trees(&ct, &rt);
    let df = if ct.has_error() {
        dataflow_match_trees(&rt, &rt).map(|_| 0.0)
    } else {
        dataflow_match_trees(&ct, &rt)
    };
    let w = weights;
    let score = match df {
        Some(d) => w.bleu * b + w.weighted_bleu * wb + w.syntax_match * sm + w.dataflow_match * d,
        None => {
            let rest = w.bleu + w.weighted_bleu + w.syntax_match;
            if rest == 0.0 {
                0.0
            } else {
                (w.bleu / rest) * b + (w.weighted_bleu / rest) * wb + (w.syntax_match / rest) * sm
            }
        }
    };
    Ok(CodeBleu {
        score: score.clamp(0.0, 1.0),
        bleu: b,
        weighted_bleu: wb,
        syntax_match: sm,
        dataflow_match: df,
        dataflow_redistributed: df.is_none() && w.dataflow_match > 0.0,
    })
}
