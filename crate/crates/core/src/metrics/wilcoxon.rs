//! Two-sided Wilcoxon signed-rank test.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of non-zero differences handled by the exact null
/// distribution.
pub const EXACT_MAX_N: usize = 25;
pub const MIN_NONZERO: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Wilcoxon {
    pub p_value: f64,
    /// `min(W+, W-)`.
    pub statistic: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub method: WilcoxonMethod,
    /// All differences were zero; `p_value` is 1.
    pub degenerate: bool,
}

/// Average ranks of `values` (1-based), ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// `P(W+ <= w)` under the null, by counting subsets of the (possibly
/// tied) ranks. Ranks are doubled so half-ranks stay integral.
fn exact_lower_tail(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (w * 2.0).round() as usize;
    let hits: f64 = counts[..=limit.min(total)].iter().sum();
    hits / 2f64.powi(ranks.len() as i32)
}

/// Two-sided test on paired samples; zero differences are dropped. Exact
/// for up to [`EXACT_MAX_N`] non-zero differences, normal approximation
/// above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    wilcoxon_signed_rank_using(a, b, None)
}

/// Like [`wilcoxon_signed_rank`], with the p-value method forced when
/// `method` is `Exact` or `Normal`.
pub fn wilcoxon_signed_rank_using(a: &[f64], b: &[f64], method: Option<WilcoxonMethod>) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| d.is_nan()) {
        return Err(Error::Argument("paired samples contain NaN".into()));
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(Wilcoxon {
            p_value: 1.0,
            statistic: 0.0,
            n: 0,
            method: WilcoxonMethod::Degenerate,
            degenerate: true,
        });
    }
    if n < MIN_NONZERO {
        return Err(Error::Argument(format!(
            "need at least {MIN_NONZERO} non-zero differences, got {n}"
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);
    let exact = match method {
        Some(WilcoxonMethod::Exact) => true,
        Some(WilcoxonMethod::Normal) => false,
        _ => n <= EXACT_MAX_N,
    };
    let (p, method) = if exact {
        (2.0 * exact_lower_tail(&ranks, statistic), WilcoxonMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let j = sorted[i..].iter().take_while(|x| **x == sorted[i]).count();
            let t = j as f64;
            tie_term += t * t * t - t;
            i += j;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        // continuity correction of half the lattice step of W+, which is
        // 1/2 once tied magnitudes produce half ranks
        let step = if ranks.iter().any(|r| r.fract() != 0.0) {
            0.5
        } else {
            1.0
        };
        let dev = statistic - mean;
        let z = (dev - 0.5 * step * dev.signum()) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * normal.cdf(z), WilcoxonMethod::Normal)
    };
    Ok(Wilcoxon {
        p_value: p.min(1.0),
        statistic,
        n,
        method,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn equal_samples_are_degenerate() {
        let a = [1.0, 2.0, 3.0];
        let w = wilcoxon_signed_rank(&a, &a).unwrap();
        assert_eq!(w.p_value, 1.0);
        assert!(w.degenerate);
    }

    #[test]
    fn all_positive_eight_pairs() {
        // only the all-plus and all-minus patterns are this extreme
        let a: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let b = vec![0.0; 8];
        let w = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(w.statistic, 0.0);
        assert!((w.p_value - 2.0 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_differences() {
        assert!(wilcoxon_signed_rank(&[1.0, 2.0], &[0.0, 0.0]).is_err());
    }
}
