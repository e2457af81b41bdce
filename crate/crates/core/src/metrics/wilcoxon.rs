use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::MetricsError;

/// Largest sample size that uses the exact null distribution.
pub const EXACT_MAX_N: usize = 25;
pub const MIN_PAIRS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Smaller of the positive and negative rank sums.
    pub statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    /// Nonzero differences.
    pub n: usize,
    pub exact: bool,
}

/// Average ranks of `|d|`, ties sharing the mean of their positions.
fn ranks(abs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut r = vec![0.0; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// `P(W⁺ ≤ w)` under the null, counting sign assignments over the given
/// doubled (hence integral) ranks.
fn exact_cdf(doubled: &[usize], w2: usize) -> f64 {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &r in doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let hits: f64 = counts[..=w2.min(total)].iter().sum();
    hits / 2f64.powi(doubled.len() as i32)
}

/// Two-sided Wilcoxon signed-rank test on paired samples `a − b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.is_empty() {
        return Err(MetricsError::NoNonzeroDifferences);
    }
    let n = d.len();
    if n < MIN_PAIRS {
        return Err(MetricsError::TooFewPairs(n));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let r = ranks(&abs);
    let w_plus: f64 = d.iter().zip(&r).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w = w_plus.min(total - w_plus);

    if n <= EXACT_MAX_N {
        let doubled: Vec<usize> = r.iter().map(|v| (2.0 * v).round() as usize).collect();
        let p = (2.0 * exact_cdf(&doubled, (2.0 * w).round() as usize)).min(1.0);
        return Ok(WilcoxonResult {
            statistic: w,
            p_value: p,
            n,
            exact: true,
        });
    }
    let nf = n as f64;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    for group in sorted.chunk_by(|x, y| x == y) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w - total / 2.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(WilcoxonResult {
        statistic: w,
        p_value: (2.0 * normal.cdf(z)).min(1.0),
        n,
        exact: false,
    })
}
