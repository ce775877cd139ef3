//! Automatic evaluation metrics for generated code and the signed-rank
//! significance test.

pub mod bleu;
pub mod syntax;
pub mod wilcoxon;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkers::{parallel_check_all, Checker};
use crate::error::{Error, Result};
use crate::grammar::Grammar;

pub use bleu::{
    bleu, bleu_breakdown, crystal_bleu, weighted_bleu, BleuBreakdown, CrystalBleu, KeywordWeights, TrivialNGramSet,
    DEFAULT_KEYWORD_WEIGHT, DEFAULT_TRIVIAL_K,
};
pub use syntax::{
    code_bleu, code_tokens, dataflow_match_trees, def_use_edges, extract_sql, normalize_sql, syntax_exact_match,
    syntax_match, CodeBleu, CodeBleuWeights, Style,
};
pub use wilcoxon::{wilcoxon_signed_rank, wilcoxon_signed_rank_using, Wilcoxon, WilcoxonMethod};

/// Fraction of candidates the checker accepts.
pub fn code_executable<C, S>(candidates: &[S], checker: &C) -> Result<f64>
where
    C: Checker + ?Sized,
    S: AsRef<str> + Sync,
{
    if candidates.is_empty() {
        return Err(Error::Argument("no candidates to check".into()));
    }
    let mut ok = 0;
    for r in parallel_check_all(checker, candidates, 0) {
        if r?.executable {
            ok += 1;
        }
    }
    Ok(ok as f64 / candidates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Bleu,
    WeightedBleu,
    CrystalBleu,
    CodeBleu,
    SyntaxMatch,
    SyntaxExactMatch,
    CodeExecutable,
}

impl MetricName {
    pub const ALL: [MetricName; 7] = [
        MetricName::Bleu,
        MetricName::WeightedBleu,
        MetricName::CrystalBleu,
        MetricName::CodeBleu,
        MetricName::SyntaxMatch,
        MetricName::SyntaxExactMatch,
        MetricName::CodeExecutable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Bleu => "bleu",
            MetricName::WeightedBleu => "weighted_bleu",
            MetricName::CrystalBleu => "crystal_bleu",
            MetricName::CodeBleu => "code_bleu",
            MetricName::SyntaxMatch => "syntax_match",
            MetricName::SyntaxExactMatch => "syntax_exact_match",
            MetricName::CodeExecutable => "code_executable",
        }
    }
}

impl std::str::FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPair {
    pub id: String,
    pub candidate: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<Style>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub grammar: Grammar,
    pub style: Style,
    pub metrics: Vec<MetricName>,
    pub code_bleu_weights: CodeBleuWeights,
    pub keyword_weight: f64,
    pub trivial_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grammar: Grammar::Python,
            style: Style::NativeSql,
            metrics: MetricName::ALL.to_vec(),
            code_bleu_weights: CodeBleuWeights::default(),
            keyword_weight: DEFAULT_KEYWORD_WEIGHT,
            trivial_k: DEFAULT_TRIVIAL_K,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairRow {
    pub id: String,
    pub scores: BTreeMap<MetricName, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataflow_match: Option<f64>,
    pub dataflow_redistributed: bool,
    pub crystal_degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub executable: Option<bool>,
}

/// Echo of the settings a report was produced under.
#[derive(Debug, Clone, Serialize)]
pub struct ReportConfig {
    pub grammar: Grammar,
    pub style: Style,
    pub code_bleu_weights: CodeBleuWeights,
    pub keyword_weight: f64,
    pub trivial_k: usize,
    pub trivial_set_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checker_id: Option<String>,
    /// Data flow is matched with def-use edges, not full graph matching.
    pub dataflow: &'static str,
    pub tokenization: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub rows: Vec<PairRow>,
    /// Corpus means per metric; `code_executable` is the accepted fraction.
    pub corpus: BTreeMap<MetricName, f64>,
    pub degenerate_crystal_pairs: usize,
    pub dataflow_redistributed_pairs: usize,
    pub config: ReportConfig,
}

/// Scores every pair and aggregates corpus means. The trivial n-gram set
/// is built from `background` when given, else from the references.
pub fn evaluate(
    pairs: &[EvalPair],
    cfg: &EvalConfig,
    background: Option<&[Vec<String>]>,
    checker: Option<&dyn Checker>,
) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Argument("nothing to evaluate".into()));
    }
    let g = cfg.grammar;
    let wants = |m| cfg.metrics.contains(&m);
    if wants(MetricName::CodeExecutable) && checker.is_none() {
        return Err(Error::Argument("code_executable requires a checker".into()));
    }
    let keywords = KeywordWeights::for_language(g, cfg.keyword_weight)?;
    let tokenized: Vec<(Vec<String>, Vec<String>)> = pairs
        .par_iter()
        .map(|p| Ok((code_tokens(&p.candidate, g)?, code_tokens(&p.reference, g)?)))
        .collect::<Result<_>>()?;
    let trivial = if wants(MetricName::CrystalBleu) {
        match background {
            Some(docs) => TrivialNGramSet::from_corpus(docs, cfg.trivial_k),
            None => {
                let refs: Vec<&[String]> = tokenized.iter().map(|(_, r)| r.as_slice()).collect();
                TrivialNGramSet::from_corpus(&refs, cfg.trivial_k)
            }
        }
    } else {
        TrivialNGramSet::empty()
    };
    let mut rows: Vec<PairRow> = pairs
        .par_iter()
        .zip(tokenized.par_iter())
        .map(|(p, (c, r))| -> Result<PairRow> {
            let mut scores = BTreeMap::new();
            let mut row = PairRow {
                id: p.id.clone(),
                scores: BTreeMap::new(),
                dataflow_match: None,
                dataflow_redistributed: false,
                crystal_degenerate: false,
                executable: None,
            };
            if wants(MetricName::Bleu) {
                scores.insert(MetricName::Bleu, bleu(c, r));
            }
            if wants(MetricName::WeightedBleu) {
                scores.insert(MetricName::WeightedBleu, weighted_bleu(c, r, &keywords));
            }
            if wants(MetricName::CrystalBleu) {
                let cb = crystal_bleu(c, r, &trivial);
                row.crystal_degenerate = cb.degenerate;
                scores.insert(MetricName::CrystalBleu, cb.score);
            }
            if wants(MetricName::CodeBleu) {
                let cb = code_bleu(&p.candidate, &p.reference, g, &cfg.code_bleu_weights, &keywords)?;
                row.dataflow_match = cb.dataflow_match;
                row.dataflow_redistributed = cb.dataflow_redistributed;
                scores.insert(MetricName::CodeBleu, cb.score);
            }
            if wants(MetricName::SyntaxMatch) {
                scores.insert(MetricName::SyntaxMatch, syntax_match(&p.candidate, &p.reference, g)?);
            }
            if wants(MetricName::SyntaxExactMatch) {
                let style = p.style.unwrap_or(cfg.style);
                scores.insert(
                    MetricName::SyntaxExactMatch,
                    syntax_exact_match(&p.candidate, &p.reference, g, style)?,
                );
            }
            row.scores = scores;
            Ok(row)
        })
        .collect::<Result<_>>()?;
    if let Some(checker) = checker.filter(|_| wants(MetricName::CodeExecutable)) {
        let sources: Vec<&str> = pairs.iter().map(|p| p.candidate.as_str()).collect();
        for (row, outcome) in rows.iter_mut().zip(parallel_check_all(checker, &sources, 0)) {
            row.executable = Some(outcome?.executable);
        }
    }
    let mut corpus = BTreeMap::new();
    for m in &cfg.metrics {
        let vals: Vec<f64> = if *m == MetricName::CodeExecutable {
            rows.iter()
                .filter_map(|r| r.executable)
                .map(|e| if e { 1.0 } else { 0.0 })
                .collect()
        } else {
            rows.iter().filter_map(|r| r.scores.get(m).copied()).collect()
        };
        if !vals.is_empty() {
            corpus.insert(*m, vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    Ok(MetricReport {
        degenerate_crystal_pairs: rows.iter().filter(|r| r.crystal_degenerate).count(),
        dataflow_redistributed_pairs: rows.iter().filter(|r| r.dataflow_redistributed).count(),
        rows,
        corpus,
        config: ReportConfig {
            grammar: g,
            style: cfg.style,
            code_bleu_weights: cfg.code_bleu_weights,
            keyword_weight: cfg.keyword_weight,
            trivial_k: cfg.trivial_k,
            trivial_set_hash: trivial.hash(),
            checker_id: checker.map(|c| c.id()),
            dataflow: "def-use approximation",
            tokenization: "parser leaves split on whitespace",
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkers::ScriptedChecker;

    #[test]
    fn executable_fraction() {
        let srcs = ["a", "b", "c", "bad"];
        let c = ScriptedChecker::new(|s: &str| s != "bad");
        assert_eq!(code_executable(&srcs, &c).unwrap(), 0.75);
        let none = ScriptedChecker::new(|_: &str| false);
        assert_eq!(code_executable(&srcs, &none).unwrap(), 0.0);
    }

    #[test]
    fn identity_corpus_scores_one() {
        let pairs: Vec<EvalPair> = [
            "cur.execute(\"SELECT a FROM t WHERE b = 1\")\nrows = cur.fetchall()\nprint(rows)",
            "def f(db, k):\n    q = db.execute(\"SELECT v FROM kv WHERE k = ?\", (k,))\n    return q.fetchone()",
        ]
        .iter()
        .enumerate()
        .map(|(i, s)| EvalPair {
            id: i.to_string(),
            candidate: s.to_string(),
            reference: s.to_string(),
            style: None,
        })
        .collect();
        let cfg = EvalConfig {
            trivial_k: 2,
            ..Default::default()
        };
        let checker = ScriptedChecker::new(|_: &str| true);
        let report = evaluate(&pairs, &cfg, None, Some(&checker)).unwrap();
        for (m, v) in &report.corpus {
            assert_eq!(*v, 1.0, "{m:?}");
        }
        assert_eq!(report.corpus.len(), 7);
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["config"]["checker_id"], "scripted");
    }

    #[test]
    fn metric_names_parse() {
        for m in MetricName::ALL {
            assert_eq!(m.as_str().parse::<MetricName>().unwrap(), m);
        }
        assert!("rouge".parse::<MetricName>().is_err());
    }
}
