//! NL/code datasets: JSONL loading, statistics, dual-task pair
//! construction and a synthetic generator for toy training.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grammar::Grammar;
pub use crate::metrics::Style;
use crate::prompt::{PromptTemplate, TaskId};
use crate::sat::{render, sat_encode, TagPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub nl: String,
    pub code: String,
    pub language: Grammar,
    pub style: Style,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Argument("sample id is empty".into()));
        }
        if self.nl.trim().is_empty() || self.code.trim().is_empty() {
            return Err(Error::Argument(format!("sample `{}` has empty nl or code", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SplitSpec {
    /// Rejects ids shared within or across splits.
    pub fn new(train: Vec<Sample>, valid: Vec<Sample>, test: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in train.iter().chain(&valid).chain(&test) {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self { train, valid, test })
    }
}

/// Reads one sample per line; blank lines are skipped.
pub fn load_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path)?;
    parse_jsonl(&text, path)
}

pub fn parse_jsonl(text: &str, path: &Path) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Corpus {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let s: Sample = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        s.validate().map_err(|e| err(e.to_string()))?;
        if !seen.insert(s.id.clone()) {
            return Err(Error::DuplicateId(s.id));
        }
        out.push(s);
    }
    Ok(out)
}

pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "valid.jsonl", "test.jsonl"];

/// Loads `train.jsonl`, `valid.jsonl` and `test.jsonl` from `dir`.
pub fn load_split(dir: &Path) -> Result<SplitSpec> {
    let [train, valid, test] = SPLIT_FILES.map(|f| dir.join(f));
    SplitSpec::new(load_jsonl(&train)?, load_jsonl(&valid)?, load_jsonl(&test)?)
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut text = String::new();
    for s in samples {
        text.push_str(&serde_json::to_string(s)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_split(dir: &Path, split: &SplitSpec) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (f, s) in SPLIT_FILES.iter().zip([&split.train, &split.valid, &split.test]) {
        write_jsonl(&dir.join(f), s)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub count: usize,
    /// Whitespace tokens, rounded to two decimals.
    pub mean_nl_tokens: f64,
    pub mean_code_tokens: f64,
}

/// `total / n` rounded half up to two decimals, exactly.
fn mean2(total: usize, n: usize) -> f64 {
    ((200 * total + n) / (2 * n)) as f64 / 100.0
}

pub fn stats(samples: &[Sample]) -> Result<CorpusStats> {
    if samples.is_empty() {
        return Err(Error::Argument("statistics of an empty split".into()));
    }
    let n = samples.len();
    let nl: usize = samples.iter().map(|s| s.nl.split_whitespace().count()).sum();
    let code: usize = samples.iter().map(|s| s.code.split_whitespace().count()).sum();
    Ok(CorpusStats {
        count: samples.len(),
        mean_nl_tokens: mean2(nl, n),
        mean_code_tokens: mean2(code, n),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitStats {
    pub train: Option<CorpusStats>,
    pub valid: Option<CorpusStats>,
    pub test: Option<CorpusStats>,
}

/// Per-split statistics; empty splits report `None`.
pub fn split_stats(split: &SplitSpec) -> SplitStats {
    SplitStats {
        train: stats(&split.train).ok(),
        valid: stats(&split.valid).ok(),
        test: stats(&split.test).ok(),
    }
}

/// Prompt text and target text of one training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub input: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MtlPair {
    pub id: String,
    /// Prompted description → code tokens.
    pub primary: TextPair,
    /// Prompted description → rendered syntax-augmented traversal.
    pub auxiliary: TextPair,
}

/// Builds the two task examples for one sample. Code that fails to parse
/// is a [`Error::Parser`] error.
pub fn make_mtl_pairs(sample: &Sample, policy: &TagPolicy, tpl: &PromptTemplate) -> Result<MtlPair> {
    let g = sample.language;
    let tree = g.parse(&sample.code)?;
    if tree.has_error() {
        return Err(Error::Parser(format!("sample `{}` does not parse", sample.id)));
    }
    let (pri_in, _) = tpl.build(TaskId::Origin, &sample.nl);
    let (aux_in, _) = tpl.build(TaskId::Syntax, &sample.nl);
    Ok(MtlPair {
        id: sample.id.clone(),
        primary: TextPair {
            input: pri_in,
            target: g.code_tokens(&tree).join(" "),
        },
        auxiliary: TextPair {
            input: aux_in,
            target: render(&sat_encode(&tree, policy)),
        },
    })
}

#[derive(Debug, Clone, Default)]
pub struct MtlCorpus {
    pub pairs: Vec<MtlPair>,
    /// Ids of samples skipped because their code did not parse.
    pub skipped: Vec<String>,
}

/// [`make_mtl_pairs`] over a split, skipping (and counting) unparseable
/// samples. The tag policy follows each sample's grammar.
pub fn make_mtl_corpus(samples: &[Sample], tag_policy: &TagPolicy, tpl: &PromptTemplate) -> Result<MtlCorpus> {
    let mut out = MtlCorpus::default();
    for s in samples {
        let policy = TagPolicy {
            tag_length: tag_policy.tag_length,
            placeholder: tag_policy.placeholder.clone(),
            ..TagPolicy::for_grammar(s.language)
        };
        match make_mtl_pairs(s, &policy, tpl) {
            Ok(p) => out.pairs.push(p),
            Err(Error::Parser(_)) => {
                log::warn!("skipping sample `{}`: code does not parse", s.id);
                out.skipped.push(s.id.clone());
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

const TABLES: &[(&str, &str, &[&str])] = &[
    ("users", "user", &["id", "name", "email", "age"]),
    ("orders", "order", &["id", "user_id", "total", "status"]),
    ("books", "book", &["id", "title", "author", "year"]),
    ("items", "item", &["id", "label", "price", "stock"]),
];

/// Small Turducken-style Python corpus: SQL strings executed through a
/// cursor, described in plain English. Deterministic in `seed`.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (table, noun, cols) = TABLES[rng.gen_range(0..TABLES.len())];
            let mut picks = cols.to_vec();
            picks.shuffle(&mut rng);
            let (a, b) = (picks[0], picks[1]);
            let (nl, code) = match rng.gen_range(0..4) {
                0 => (
                    format!("get the {a} of every {noun} with the given {b}"),
                    format!("def f(cur, {b}):\n    cur.execute(\"SELECT {a} FROM {table} WHERE {b} = ?\", ({b},))\n    return cur.fetchall()"),
                ),
                1 => (
                    format!("count the {table} whose {a} equals the value"),
                    format!("def f(cur, {a}):\n    cur.execute(\"SELECT COUNT(*) FROM {table} WHERE {a} = ?\", ({a},))\n    return cur.fetchone()[0]"),
                ),
                2 => (
                    format!("delete the {noun} with the given {a}"),
                    format!("def f(conn, {a}):\n    conn.execute(\"DELETE FROM {table} WHERE {a} = ?\", ({a},))\n    conn.commit()"),
                ),
                _ => (
                    format!("set the {a} of the {noun} identified by {b}"),
                    format!("def f(conn, {a}, {b}):\n    conn.execute(\"UPDATE {table} SET {a} = ? WHERE {b} = ?\", ({a}, {b}))\n    conn.commit()"),
                ),
            };
            Sample {
                id: format!("syn-{i:05}"),
                nl,
                code,
                language: Grammar::Python,
                style: Style::NativeSql,
            }
        })
        .collect()
}

const NL_KEYS: &[&str] = &["nl", "comment", "description", "desc", "docstring", "question"];
const CODE_KEYS: &[&str] = &["code", "source", "program", "snippet"];
const ID_KEYS: &[&str] = &["id", "idx", "index"];

fn field<'a>(obj: &'a serde_json::Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k))
}

/// Converts loosely shaped records (a JSON array, or one object per line)
/// into samples. Common field aliases are accepted; missing ids become
/// `{prefix}-{index}`.
pub fn convert_records(
    text: &str,
    language: Grammar,
    style: Style,
    prefix: &str,
    origin: &Path,
) -> Result<Vec<Sample>> {
    let values: Vec<(usize, Value)> = match serde_json::from_str::<Value>(text) {
        Ok(Value::Array(items)) => items.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect(),
        _ => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map(|v| (i + 1, v)).map_err(|e| Error::Corpus {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?,
    };
    let mut out = Vec::with_capacity(values.len());
    let mut seen = HashSet::new();
    for (n, (line, v)) in values.into_iter().enumerate() {
        let err = |message: &str| Error::Corpus {
            path: origin.to_path_buf(),
            line,
            message: message.to_string(),
        };
        let obj = v.as_object().ok_or_else(|| err("record is not an object"))?;
        let text_of = |keys: &[&str]| -> Option<String> {
            field(obj, keys).and_then(|v| match v {
                Value::String(s) => Some(s.clone()),
                Value::Array(parts) => Some(parts.iter().filter_map(Value::as_str).collect::<Vec<_>>().join(" ")),
                _ => None,
            })
        };
        let nl = text_of(NL_KEYS).ok_or_else(|| err("no description field"))?;
        let code = text_of(CODE_KEYS).ok_or_else(|| err("no code field"))?;
        let id = match field(obj, ID_KEYS) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(x)) => x.to_string(),
            _ => format!("{prefix}-{n}"),
        };
        let s = Sample {
            id,
            nl,
            code,
            language,
            style,
        };
        s.validate().map_err(|e| err(&e.to_string()))?;
        if !seen.insert(s.id.clone()) {
            return Err(Error::DuplicateId(s.id));
        }
        out.push(s);
    }
    Ok(out)
}

/// Default location of a split inside `root`, for CLI convenience.
pub fn split_dir(root: &Path) -> PathBuf {
    if root.join(SPLIT_FILES[0]).exists() {
        root.to_path_buf()
    } else {
        root.join("data")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sat::{parse_rendered, strip_tags};

    fn sample(id: &str, nl: &str, code: &str) -> Sample {
        Sample {
            id: id.into(),
            nl: nl.into(),
            code: code.into(),
            language: Grammar::Python,
            style: Style::NativeSql,
        }
    }

    #[test]
    fn one_line_file() {
        let text = r#"{"id":"a","nl":"x y","code":"return 1","language":"python","style":"native_sql"}"#;
        let s = parse_jsonl(text, Path::new("t.jsonl")).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = "{\"id\":\"a\",\"nl\":\"x\",\"code\":\"c\",\"language\":\"python\",\"style\":\"orm\"}\n{oops\n";
        match parse_jsonl(text, Path::new("t.jsonl")) {
            Err(Error::Corpus { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = r#"{"id":"dup","nl":"x","code":"c","language":"java","style":"orm"}"#;
        let text = format!("{line}\n{line}\n");
        match parse_jsonl(&text, Path::new("t.jsonl")) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "dup"),
            other => panic!("{other:?}"),
        }
        let s = sample("x", "a", "b");
        assert!(SplitSpec::new(vec![s.clone()], vec![], vec![s]).is_err());
    }

    #[test]
    fn stats_means() {
        let s = [sample("1", "a b c", "x"), sample("2", "a b c d e", "x y")];
        let st = stats(&s).unwrap();
        assert_eq!(st.mean_nl_tokens, 4.0);
        assert_eq!(st.mean_code_tokens, 1.5);
        assert!(stats(&[]).is_err());
    }

    #[test]
    fn return_one_pairs() {
        let s = sample("r", "give back one", "return 1");
        let p = make_mtl_pairs(&s, &TagPolicy::default(), &PromptTemplate::default()).unwrap();
        assert_eq!(p.auxiliary.target, "<mod> <ret> return 1 </ret> </mod>");
        assert_eq!(p.auxiliary.input, "Generate syntax code : give back one");
        assert_eq!(p.primary.input, "Generate origin code : give back one");
        let none = PromptTemplate::new(crate::prompt::PromptKind::None);
        let p = make_mtl_pairs(&s, &TagPolicy::default(), &none).unwrap();
        assert_eq!(p.auxiliary.input, "give back one");
    }

    #[test]
    fn unparseable_samples_are_counted() {
        let s = [sample("ok", "a", "return 1"), sample("bad", "b", "return ((")];
        let c = make_mtl_corpus(&s, &TagPolicy::default(), &PromptTemplate::default()).unwrap();
        assert_eq!(c.pairs.len(), 1);
        assert_eq!(c.skipped, vec!["bad".to_string()]);
    }

    #[test]
    fn synthetic_corpus_round_trips_through_sat() {
        let samples = synthetic_corpus(40, 7);
        assert_eq!(samples, synthetic_corpus(40, 7));
        let policy = TagPolicy::for_grammar(Grammar::Python);
        let c = make_mtl_corpus(&samples, &policy, &PromptTemplate::default()).unwrap();
        assert!(c.skipped.is_empty());
        for (p, s) in c.pairs.iter().zip(&samples) {
            let tree = Grammar::Python.parse(&s.code).unwrap();
            let expected: Vec<String> = tree
                .leaves()
                .filter(|l| !l.value().unwrap_or("").is_empty())
                .map(|l| {
                    if policy.masks(l) {
                        policy.placeholder.clone()
                    } else {
                        l.value().unwrap().to_string()
                    }
                })
                .collect();
            assert_eq!(strip_tags(&parse_rendered(&p.auxiliary.target)).unwrap(), expected);
        }
    }

    #[test]
    fn converter_accepts_aliases() {
        let text = r#"[{"comment":"get all","code":"x = 1"},{"idx":7,"question":"q","source":["a","b"]}]"#;
        let s = convert_records(text, Grammar::Python, Style::Orm, "lyra", Path::new("x.json")).unwrap();
        assert_eq!(s[0].id, "lyra-0");
        assert_eq!(s[1].id, "7");
        assert_eq!(s[1].code, "a b");
    }
}
