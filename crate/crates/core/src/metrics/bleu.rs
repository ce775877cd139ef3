//! Sentence-level BLEU and its keyword-weighted and trivial-n-gram-filtered
//! variants.
//!
//! Smoothing: `p1 = m1/d1` (zero unigram matches give 0); for `n >= 2`,
//! `pn = mn/dn` when `mn > 0`, else `1/(dn + 1)`. Brevity penalty is
//! `exp(1 - r/c)` when the candidate is not longer than the reference.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grammar::Grammar;

pub const MAX_N: usize = 4;
pub const DEFAULT_KEYWORD_WEIGHT: f64 = 5.0;
pub const DEFAULT_TRIVIAL_K: usize = 500;

type NGram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<NGram<'_>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Per-order clipped matches and totals behind a BLEU score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuBreakdown {
    pub score: f64,
    pub matches: Vec<f64>,
    pub totals: Vec<f64>,
    pub brevity_penalty: f64,
    /// Every candidate unigram was filtered out (Crystal-BLEU only).
    pub degenerate: bool,
}

fn combine(matches: Vec<f64>, totals: Vec<f64>, cand_len: usize, ref_len: usize) -> BleuBreakdown {
    let brevity_penalty = if cand_len == 0 {
        0.0
    } else if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let degenerate = cand_len > 0 && totals[0] == 0.0;
    let score = if cand_len == 0 || totals[0] == 0.0 || matches[0] == 0.0 {
        0.0
    } else {
        let mut log_sum = (matches[0] / totals[0]).ln();
        for n in 1..matches.len() {
            let p = if matches[n] > 0.0 {
                matches[n] / totals[n]
            } else {
                1.0 / (totals[n] + 1.0)
            };
            log_sum += p.ln();
        }
        (brevity_penalty * (log_sum / matches.len() as f64).exp()).min(1.0)
    };
    BleuBreakdown {
        score,
        matches,
        totals,
        brevity_penalty,
        degenerate,
    }
}

fn generic<W, K>(candidate: &[String], reference: &[String], max_n: usize, weight: W, keep: K) -> BleuBreakdown
where
    W: Fn(NGram<'_>) -> f64,
    K: Fn(usize, NGram<'_>) -> bool,
{
    let mut matches = Vec::with_capacity(max_n);
    let mut totals = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let c = ngram_counts(candidate, n);
        let r = ngram_counts(reference, n);
        let mut m = 0.0;
        let mut t = 0.0;
        // fixed summation order keeps results bit-reproducible
        let mut grams: Vec<_> = c.into_iter().filter(|(g, _)| keep(n, g)).collect();
        grams.sort_unstable();
        for (g, count) in grams {
            let w = weight(g);
            let clipped = count.min(r.get(g).copied().unwrap_or(0));
            m += w * clipped as f64;
            t += w * count as f64;
        }
        matches.push(m);
        totals.push(t);
    }
    combine(matches, totals, candidate.len(), reference.len())
}

pub fn bleu_breakdown(candidate: &[String], reference: &[String], max_n: usize) -> BleuBreakdown {
    generic(candidate, reference, max_n, |_| 1.0, |_, _| true)
}

/// Sentence BLEU; 0 for an empty candidate or reference.
pub fn bleu(candidate: &[String], reference: &[String]) -> f64 {
    bleu_breakdown(candidate, reference, MAX_N).score
}

/// Per-token weights; tokens not listed weigh 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeywordWeights {
    weights: HashMap<String, f64>,
}

const PYTHON_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del",
    "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
    "not", "or", "pass", "raise", "return", "try", "while", "with", "yield",
];

const JAVA_KEYWORDS: &[&str] = &[
    "abstract",
    "assert",
    "boolean",
    "break",
    "byte",
    "case",
    "catch",
    "char",
    "class",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extends",
    "final",
    "finally",
    "float",
    "for",
    "goto",
    "if",
    "implements",
    "import",
    "instanceof",
    "int",
    "interface",
    "long",
    "native",
    "new",
    "package",
    "private",
    "protected",
    "public",
    "return",
    "short",
    "static",
    "strictfp",
    "super",
    "switch",
    "synchronized",
    "this",
    "throw",
    "throws",
    "transient",
    "try",
    "void",
    "volatile",
    "while",
    "true",
    "false",
    "null",
];

impl KeywordWeights {
    pub fn uniform() -> Self {
        Self::default()
    }

    /// The grammar's reserved words at `weight`, everything else at 1.
    pub fn for_language(grammar: Grammar, weight: f64) -> Result<Self> {
        let words = match grammar {
            Grammar::Python => PYTHON_KEYWORDS,
            Grammar::Java => JAVA_KEYWORDS,
        };
        Self::from_pairs(words.iter().map(|w| (w.to_string(), weight)))
    }

    pub fn from_pairs<I: IntoIterator<Item = (String, f64)>>(pairs: I) -> Result<Self> {
        let weights: HashMap<String, f64> = pairs.into_iter().collect();
        for (t, w) in &weights {
            if !(w.is_finite() && *w >= 1.0) {
                return Err(Error::Argument(format!(
                    "keyword weight for `{t}` must be finite and >= 1"
                )));
            }
        }
        Ok(Self { weights })
    }

    pub fn weight(&self, token: &str) -> f64 {
        self.weights.get(token).copied().unwrap_or(1.0)
    }

    fn ngram_weight(&self, g: NGram<'_>) -> f64 {
        g.iter().map(|t| self.weight(t)).sum::<f64>() / g.len() as f64
    }
}

/// BLEU with each n-gram counted at the mean weight of its tokens.
pub fn weighted_bleu(candidate: &[String], reference: &[String], weights: &KeywordWeights) -> f64 {
    generic(candidate, reference, MAX_N, |g| weights.ngram_weight(g), |_, _| true).score
}

/// The `k` most frequent n-grams of each order in a background corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TrivialRepr", into = "TrivialRepr")]
pub struct TrivialNGramSet {
    pub k: usize,
    orders: Vec<Vec<Vec<String>>>,
    lookup: Vec<HashSet<Vec<String>>>,
}

#[derive(Serialize, Deserialize)]
struct TrivialRepr {
    k: usize,
    ngrams: Vec<Vec<Vec<String>>>,
}

impl From<TrivialRepr> for TrivialNGramSet {
    fn from(r: TrivialRepr) -> Self {
        Self::from_orders(r.k, r.ngrams)
    }
}

impl From<TrivialNGramSet> for TrivialRepr {
    fn from(t: TrivialNGramSet) -> Self {
        Self {
            k: t.k,
            ngrams: t.orders,
        }
    }
}

impl TrivialNGramSet {
    pub fn empty() -> Self {
        Self {
            k: 0,
            orders: vec![Vec::new(); MAX_N],
            lookup: vec![HashSet::new(); MAX_N],
        }
    }

    /// Frequency descending, ties broken lexicographically.
    pub fn from_corpus<S: AsRef<[String]>>(corpus: &[S], k: usize) -> Self {
        let mut orders = Vec::with_capacity(MAX_N);
        for n in 1..=MAX_N {
            let mut counts: HashMap<NGram<'_>, usize> = HashMap::new();
            for doc in corpus {
                for (g, c) in ngram_counts(doc.as_ref(), n) {
                    *counts.entry(g).or_insert(0) += c;
                }
            }
            let mut ranked: Vec<_> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            orders.push(ranked.into_iter().take(k).map(|(g, _)| g.to_vec()).collect());
        }
        Self::from_orders(k, orders)
    }

    pub fn from_orders(k: usize, orders: Vec<Vec<Vec<String>>>) -> Self {
        let lookup = orders.iter().map(|o| o.iter().cloned().collect()).collect();
        Self { k, orders, lookup }
    }

    pub fn contains(&self, g: &[String]) -> bool {
        self.lookup.get(g.len().wrapping_sub(1)).is_some_and(|s| s.contains(g))
    }

    pub fn is_empty(&self) -> bool {
        self.orders.iter().all(|o| o.is_empty())
    }

    /// SHA-256 over the canonical JSON of the n-gram lists.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.orders).expect("string lists serialize");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrystalBleu {
    pub score: f64,
    pub degenerate: bool,
}

/// BLEU after removing trivially shared n-grams from both sides. A pair
/// left with no candidate unigrams scores 0 and is flagged degenerate.
pub fn crystal_bleu(candidate: &[String], reference: &[String], trivial: &TrivialNGramSet) -> CrystalBleu {
    let b = generic(candidate, reference, MAX_N, |_| 1.0, |_, g| !trivial.contains(g));
    CrystalBleu {
        score: b.score,
        degenerate: b.degenerate,
    }
}
