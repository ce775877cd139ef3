//! Independent reference implementations used to check the library.

use ndarray::{Array2, Array3};
use turducken_core::decode::{Candidate, Scorer};
use turducken_core::TaskId;

/// Sentence BLEU by direct counting: clipped n-gram matches over distinct
/// candidate n-grams, p1 = m1/d1, smoothed pn = 1/(dn+1) when mn = 0 for
/// n ≥ 2, brevity penalty exp(1 − r/c) for c ≤ r.
pub fn bleu(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let count = |seq: &[String], g: &[String]| -> usize {
        if seq.len() < g.len() {
            return 0;
        }
        (0..=seq.len() - g.len()).filter(|&i| &seq[i..i + g.len()] == g).count()
    };
    let mut log_p = 0.0;
    for n in 1..=4 {
        let d = c.len().saturating_sub(n - 1) as f64;
        let mut m = 0usize;
        if c.len() >= n {
            for i in 0..=c.len() - n {
                let g = &c[i..i + n];
                let first = (0..i).all(|j| &c[j..j + n] != g);
                if first {
                    m += count(c, g).min(count(r, g));
                }
            }
        }
        let p = if n == 1 {
            if m == 0 {
                return 0.0;
            }
            m as f64 / d
        } else if m == 0 {
            1.0 / (d + 1.0)
        } else {
            m as f64 / d
        };
        log_p += p.ln() / 4.0;
    }
    let (cl, rl) = (c.len() as f64, r.len() as f64);
    let bp = if cl > rl { 1.0 } else { (1.0 - rl / cl).exp() };
    (bp * log_p.exp()).min(1.0)
}

/// Every complete hypothesis under the decoding rules: a path ends at eos
/// (which counts toward `max_len`) or after `max_len` ordinary tokens.
/// Sorted by likelihood, then by emitted ids including eos.
pub fn exhaustive<S: Scorer>(scorer: &S, max_len: usize) -> Vec<Candidate> {
    let sp = scorer.specials();
    let mut out = Vec::new();
    let mut stack = vec![(Vec::<u32>::new(), 0.0f64)];
    while let Some((ids, lp)) = stack.pop() {
        let dist = scorer.next_distribution(&ids, TaskId::Origin).unwrap();
        for (t, &l) in dist.iter().enumerate() {
            let t = t as u32;
            if l == f64::NEG_INFINITY || (t != sp.eos && (Some(t) == sp.bos || Some(t) == sp.pad)) {
                continue;
            }
            if t == sp.eos {
                out.push(Candidate {
                    ids: ids.clone(),
                    finished: true,
                    logprob: lp + l,
                });
                continue;
            }
            let mut next = ids.clone();
            next.push(t);
            if next.len() == max_len {
                out.push(Candidate {
                    ids: next,
                    finished: false,
                    logprob: lp + l,
                });
            } else {
                stack.push((next, lp + l));
            }
        }
    }
    out.sort_by(|a, b| a.rank_cmp(b, sp.eos));
    out
}

/// Two-sided signed-rank p-value by enumerating all 2ⁿ sign assignments of
/// the given magnitudes' ranks: P(min(W+, W−) ≤ w_observed).
pub fn wilcoxon_enumeration(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    // average ranks by pairwise comparison
    let ranks: Vec<f64> = abs
        .iter()
        .map(|x| {
            let below = abs.iter().filter(|y| *y < x).count() as f64;
            let equal = abs.iter().filter(|y| *y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let stat = |mask: u32| {
        let wp: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        wp.min(total - wp)
    };
    let observed_mask = (0..n).filter(|&i| diffs[i] > 0.0).fold(0u32, |m, i| m | 1 << i);
    let w = stat(observed_mask);
    let hits = (0..1u32 << n).filter(|&m| stat(m) <= w + 1e-9).count();
    hits as f64 / (1u64 << n) as f64
}

/// `softmax(Q (K+P_i)ᵀ / √d)·(V+P_i)` row by row with max-shifted
/// exponentials and matrix products.
pub fn dense_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, p: &Array3<f64>) -> Array2<f64> {
    let (nq, d) = q.dim();
    let mut out = Array2::zeros((nq, d));
    for i in 0..nq {
        let pi = p.index_axis(ndarray::Axis(0), i);
        let kp = k + &pi;
        let vp = v + &pi;
        let scores = kp.dot(&q.row(i)) / (d as f64).sqrt();
        let max = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let e = scores.mapv(|s| (s - max).exp());
        let w = &e / e.sum();
        out.row_mut(i).assign(&w.dot(&vp));
    }
    out
}
