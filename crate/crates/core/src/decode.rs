//! Decoding strategies over any [`Scorer`]: greedy, ancestral sampling,
//! beam search, and syntax-first beam search, which compile-checks the beam
//! in descending likelihood and returns the first executable candidate.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkers::{parallel_check_all, CheckOutcome, Checker};
use crate::error::{Error, Result};
use crate::model::autograd::log_sum_exp;
use crate::prompt::TaskId;

/// Tolerance on `logsumexp` of a full next-token distribution.
pub const NORMALIZATION_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub bos: Option<u32>,
    pub eos: u32,
    pub pad: Option<u32>,
}

/// Next-token model behind every decoding strategy.
///
/// Prefixes never include bos; implementations prepend it themselves.
pub trait Scorer {
    fn vocab_size(&self) -> usize;

    fn specials(&self) -> SpecialIds;

    /// Full log-probability distribution of the next token.
    fn next_distribution(&self, prefix: &[u32], task: TaskId) -> Result<Vec<f64>>;

    /// The `k` most likely next tokens, by log-probability descending and
    /// token id ascending.
    fn top_k(&self, prefix: &[u32], task: TaskId, k: usize) -> Result<Vec<(u32, f64)>> {
        let dist = checked_distribution(self, prefix, task)?;
        Ok(top_k_of(&dist, k))
    }

    /// Source text of a token sequence (eos excluded).
    fn detokenize(&self, ids: &[u32]) -> Result<String>;

    /// Whether calls may overlap across threads.
    fn supports_concurrent_calls(&self) -> bool {
        false
    }

    /// Allowed `|logsumexp|` of a full distribution.
    fn normalization_tolerance(&self) -> f64 {
        NORMALIZATION_TOL
    }
}

/// Fetches the full distribution and enforces the normalization contract.
pub fn checked_distribution<S: Scorer + ?Sized>(scorer: &S, prefix: &[u32], task: TaskId) -> Result<Vec<f64>> {
    let dist = scorer.next_distribution(prefix, task)?;
    if dist.len() != scorer.vocab_size() {
        return Err(Error::ScorerContract(format!(
            "distribution has {} entries for vocabulary of {}",
            dist.len(),
            scorer.vocab_size()
        )));
    }
    let lse = log_sum_exp(dist.iter().copied());
    if !lse.is_finite() || lse.abs() > scorer.normalization_tolerance() || dist.iter().any(|x| x.is_nan()) {
        return Err(Error::ScorerContract(format!(
            "log-probabilities do not normalize (logsumexp = {lse})"
        )));
    }
    Ok(dist)
}

pub fn top_k_of(dist: &[f64], k: usize) -> Vec<(u32, f64)> {
    let mut idx: Vec<(u32, f64)> = dist
        .iter()
        .enumerate()
        .filter(|(_, lp)| **lp > f64::NEG_INFINITY)
        .map(|(i, lp)| (i as u32, *lp))
        .collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    idx.truncate(k);
    idx
}

/// A decoded sequence and its cumulative log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Generated tokens after bos, without the terminating eos.
    pub ids: Vec<u32>,
    /// Whether generation ended with eos (otherwise it hit `max_len`).
    pub finished: bool,
    pub logprob: f64,
}

impl Candidate {
    /// Full emitted sequence, eos included when present.
    pub fn tokens(&self, eos: u32) -> Vec<u32> {
        let mut t = self.ids.clone();
        if self.finished {
            t.push(eos);
        }
        t
    }

    /// Likelihood descending, then emitted token ids ascending.
    pub fn rank_cmp(&self, other: &Self, eos: u32) -> Ordering {
        other
            .logprob
            .total_cmp(&self.logprob)
            .then_with(|| self.tokens(eos).cmp(&other.tokens(eos)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Sampling,
    Greedy,
    Beam,
    SfBeam,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sampling" | "sample" => Strategy::Sampling,
            "greedy" => Strategy::Greedy,
            "beam" => Strategy::Beam,
            "sf_beam" | "sf-beam" => Strategy::SfBeam,
            _ => return Err(Error::Argument(format!("unknown strategy `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOpts {
    pub strategy: Strategy,
    pub beam_k: usize,
    /// Maximum number of emitted tokens, eos included.
    pub max_len: usize,
    pub seed: u64,
    pub temperature: f64,
    /// Final ranking by `logprob / len^alpha`; off by default.
    pub length_penalty: Option<f64>,
    /// Check all beam candidates concurrently in sf_beam.
    pub concurrent_checks: bool,
    /// Worker threads for concurrent checks (0 = number of CPUs).
    pub check_pool: usize,
}

impl Default for DecodeOpts {
    fn default() -> Self {
        Self {
            strategy: Strategy::SfBeam,
            beam_k: 10,
            max_len: 256,
            seed: 0,
            temperature: 1.0,
            length_penalty: None,
            concurrent_checks: true,
            check_pool: 0,
        }
    }
}

impl DecodeOpts {
    fn validate(&self) -> Result<()> {
        if self.beam_k == 0 {
            return Err(Error::Argument("beam_k must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Argument("max_len must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Argument("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// bos and pad are never emitted, unless a scorer aliases them to eos.
fn is_blocked(s: &SpecialIds, tok: u32) -> bool {
    tok != s.eos && (Some(tok) == s.bos || Some(tok) == s.pad)
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy<S: Scorer + ?Sized>(scorer: &S, task: TaskId, opts: &DecodeOpts) -> Result<Candidate> {
    opts.validate()?;
    let specials = scorer.specials();
    let mut ids = Vec::new();
    let mut logprob = 0.0;
    for _ in 0..opts.max_len {
        let dist = checked_distribution(scorer, &ids, task)?;
        let (tok, lp) = best_allowed(&dist, &specials)?;
        logprob += lp;
        if tok == specials.eos {
            return Ok(Candidate {
                ids,
                finished: true,
                logprob,
            });
        }
        ids.push(tok);
    }
    Ok(Candidate {
        ids,
        finished: false,
        logprob,
    })
}

fn best_allowed(dist: &[f64], specials: &SpecialIds) -> Result<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for (i, &lp) in dist.iter().enumerate() {
        let tok = i as u32;
        if is_blocked(specials, tok) || lp == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|(_, b)| lp > b) {
            best = Some((tok, lp));
        }
    }
    best.ok_or_else(|| Error::ScorerContract("no token has non-zero probability".into()))
}

/// Ancestral sampling from the temperature-scaled distribution. The
/// candidate's log-probability is measured under the unscaled scorer.
pub fn sample<S: Scorer + ?Sized>(scorer: &S, task: TaskId, opts: &DecodeOpts) -> Result<Candidate> {
    opts.validate()?;
    let specials = scorer.specials();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut ids = Vec::new();
    let mut logprob = 0.0;
    for _ in 0..opts.max_len {
        let dist = checked_distribution(scorer, &ids, task)?;
        let scaled: Vec<f64> = dist
            .iter()
            .enumerate()
            .map(|(i, &lp)| {
                if is_blocked(&specials, i as u32) {
                    f64::NEG_INFINITY
                } else {
                    lp / opts.temperature
                }
            })
            .collect();
        let lse = log_sum_exp(scaled.iter().copied());
        if lse == f64::NEG_INFINITY {
            return Err(Error::ScorerContract("no token has non-zero probability".into()));
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut tok = None;
        for (i, &s) in scaled.iter().enumerate() {
            if s == f64::NEG_INFINITY {
                continue;
            }
            acc += (s - lse).exp();
            tok = Some(i);
            if u < acc {
                break;
            }
        }
        let tok = tok.expect("at least one finite entry");
        logprob += dist[tok];
        if tok as u32 == specials.eos {
            return Ok(Candidate {
                ids,
                finished: true,
                logprob,
            });
        }
        ids.push(tok as u32);
    }
    Ok(Candidate {
        ids,
        finished: false,
        logprob,
    })
}

/// Length-unnormalized beam search. Finished hypotheses leave the beam;
/// the result holds at most `beam_k` distinct candidates, best first.
pub fn beam<S: Scorer + ?Sized>(scorer: &S, task: TaskId, opts: &DecodeOpts) -> Result<Vec<Candidate>> {
    opts.validate()?;
    let specials = scorer.specials();
    let eos = specials.eos;
    let k = opts.beam_k;
    let mut alive: Vec<Candidate> = vec![Candidate {
        ids: Vec::new(),
        finished: false,
        logprob: 0.0,
    }];
    let mut done: Vec<Candidate> = Vec::new();
    for step in 0..opts.max_len {
        let mut expansions = Vec::with_capacity(alive.len() * k);
        for hyp in &alive {
            // blocked specials are dropped after the fact, so ask for extra
            let want = (k + 2).min(scorer.vocab_size());
            for (tok, lp) in scorer.top_k(&hyp.ids, task, want)? {
                if is_blocked(&specials, tok) {
                    continue;
                }
                if lp.is_nan() || lp > scorer.normalization_tolerance() {
                    return Err(Error::ScorerContract(format!("log-probability {lp} > 0")));
                }
                let mut ids = hyp.ids.clone();
                let finished = tok == eos;
                if !finished {
                    ids.push(tok);
                }
                expansions.push(Candidate {
                    ids,
                    finished,
                    logprob: hyp.logprob + lp,
                });
            }
        }
        expansions.sort_by(|a, b| a.rank_cmp(b, eos));
        expansions.truncate(k);
        alive.clear();
        let last_step = step + 1 == opts.max_len;
        for c in expansions {
            if c.finished || last_step {
                done.push(c);
            } else {
                alive.push(c);
            }
        }
        if alive.is_empty() {
            break;
        }
        if done.len() >= k {
            done.sort_by(|a, b| a.rank_cmp(b, eos));
            let worst_kept = done[k - 1].logprob;
            if alive.iter().all(|c| c.logprob < worst_kept) {
                break;
            }
        }
    }
    done.extend(alive);
    match opts.length_penalty {
        None => done.sort_by(|a, b| a.rank_cmp(b, eos)),
        Some(alpha) => {
            let norm = |c: &Candidate| c.logprob / ((c.tokens(eos).len().max(1)) as f64).powf(alpha);
            done.sort_by(|a, b| {
                norm(b)
                    .total_cmp(&norm(a))
                    .then_with(|| a.tokens(eos).cmp(&b.tokens(eos)))
            })
        }
    }
    let mut seen = HashSet::new();
    done.retain(|c| seen.insert(c.ids.clone()));
    done.truncate(k);
    Ok(done)
}

/// Outcome of syntax-first beam search.
#[derive(Debug, Clone, Serialize)]
pub struct SfBeamResult {
    pub candidate: Candidate,
    pub source: String,
    pub outcome: CheckOutcome,
    /// Zero-based likelihood rank of the chosen candidate within the beam.
    pub rank: usize,
    pub beam: Vec<Candidate>,
    /// Check outcomes for the candidates that were checked, by rank.
    pub outcomes: Vec<Option<CheckOutcome>>,
}

/// Beam search followed by checking candidates in descending likelihood.
/// Returns the first executable candidate, or the likelihood argmax flagged
/// not executable when none passes.
pub fn sf_beam<S, C>(scorer: &S, task: TaskId, opts: &DecodeOpts, checker: &C) -> Result<SfBeamResult>
where
    S: Scorer + ?Sized,
    C: Checker + ?Sized,
{
    let cands = beam(scorer, task, opts)?;
    let sources: Vec<String> = cands.iter().map(|c| scorer.detokenize(&c.ids)).collect::<Result<_>>()?;
    let mut outcomes: Vec<Option<CheckOutcome>> = vec![None; cands.len()];
    if opts.concurrent_checks {
        let results = parallel_check_all(checker, &sources, opts.check_pool);
        for (slot, r) in outcomes.iter_mut().zip(results) {
            *slot = Some(r?);
        }
    } else {
        for (i, src) in sources.iter().enumerate() {
            let o = checker.check(src)?;
            let ok = o.executable;
            outcomes[i] = Some(o);
            if ok {
                break;
            }
        }
    }
    let rank = outcomes
        .iter()
        .position(|o| o.as_ref().is_some_and(|o| o.executable))
        .unwrap_or(0);
    let outcome = outcomes[rank].clone().expect("top candidate is always checked");
    Ok(SfBeamResult {
        candidate: cands[rank].clone(),
        source: sources[rank].clone(),
        outcome,
        rank,
        beam: cands,
        outcomes,
    })
}

/// Result of a decode request under any strategy.
#[derive(Debug, Clone, Serialize)]
pub struct DecodeOutput {
    pub strategy: Strategy,
    pub candidate: Candidate,
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<CheckOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

/// Runs `opts.strategy`. The checker is required for `SfBeam` and used
/// to annotate the output of the other strategies when given.
pub fn decode<S: Scorer + ?Sized>(
    scorer: &S,
    task: TaskId,
    opts: &DecodeOpts,
    checker: Option<&dyn Checker>,
) -> Result<DecodeOutput> {
    let candidate = match opts.strategy {
        Strategy::SfBeam => {
            let checker = checker.ok_or_else(|| Error::Argument("sf_beam requires a checker".into()))?;
            let r = sf_beam(scorer, task, opts, checker)?;
            return Ok(DecodeOutput {
                strategy: opts.strategy,
                candidate: r.candidate,
                source: r.source,
                outcome: Some(r.outcome),
                rank: Some(r.rank),
            });
        }
        Strategy::Greedy => greedy(scorer, task, opts)?,
        Strategy::Sampling => sample(scorer, task, opts)?,
        Strategy::Beam => beam(scorer, task, opts)?
            .into_iter()
            .next()
            .expect("beam returns at least one candidate"),
    };
    let source = scorer.detokenize(&candidate.ids)?;
    let outcome = checker.map(|c| c.check(&source)).transpose()?;
    Ok(DecodeOutput {
        strategy: opts.strategy,
        candidate,
        source,
        outcome,
        rank: None,
    })
}

/// Recomputes a candidate's log-likelihood from the scorer, step by step.
pub fn rescore<S: Scorer + ?Sized>(scorer: &S, task: TaskId, cand: &Candidate) -> Result<f64> {
    let eos = scorer.specials().eos;
    let mut total = 0.0;
    let toks = cand.tokens(eos);
    for i in 0..toks.len() {
        let dist = checked_distribution(scorer, &toks[..i], task)?;
        total += dist[toks[i] as usize];
    }
    Ok(total)
}

/// Scorer defined by an explicit function of the prefix; used for scripted
/// scenarios and tests.
pub struct TableScorer<F> {
    vocab_size: usize,
    specials: SpecialIds,
    table: F,
    names: Option<Vec<String>>,
}

impl<F> TableScorer<F>
where
    F: Fn(&[u32]) -> Vec<f64>,
{
    /// `table(prefix)` must return normalized log-probabilities.
    pub fn new(vocab_size: usize, eos: u32, table: F) -> Self {
        Self {
            vocab_size,
            specials: SpecialIds {
                bos: None,
                eos,
                pad: None,
            },
            table,
            names: None,
        }
    }

    /// Token spellings used by `detokenize`; ids print as numbers otherwise.
    pub fn with_names(mut self, names: Vec<String>) -> Self {
        self.names = Some(names);
        self
    }
}

impl<F> Scorer for TableScorer<F>
where
    F: Fn(&[u32]) -> Vec<f64>,
{
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn specials(&self) -> SpecialIds {
        self.specials
    }

    fn next_distribution(&self, prefix: &[u32], _task: TaskId) -> Result<Vec<f64>> {
        Ok((self.table)(prefix))
    }

    fn detokenize(&self, ids: &[u32]) -> Result<String> {
        Ok(ids
            .iter()
            .map(|&i| match &self.names {
                Some(n) => n.get(i as usize).cloned().unwrap_or_else(|| i.to_string()),
                None => i.to_string(),
            })
            .collect::<Vec<_>>()
            .join(" "))
    }

    fn supports_concurrent_calls(&self) -> bool {
        true
    }
}

/// Normalized log-softmax of raw scores.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits.iter().copied());
    logits.iter().map(|x| x - lse).collect()
}

/// Deterministic pseudo-random distribution for `prefix`, derived from
/// `seed`. Gives scripted scorers whose every prefix has its own table.
pub fn hashed_distribution(seed: u64, prefix: &[u32], vocab: usize) -> Vec<f64> {
    let mut h: u64 = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &t in prefix {
        h = (h ^ (t as u64 + 1)).wrapping_mul(0x1000_0000_01b3).rotate_left(17);
    }
    h = h.wrapping_add(prefix.len() as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    let logits: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
    log_softmax(&logits)
}
