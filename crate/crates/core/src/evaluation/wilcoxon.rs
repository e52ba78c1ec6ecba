//! Exact Wilcoxon signed-rank test.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest sample size for which the null distribution is tabulated.
pub const MAX_EXACT_N: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// `x` tends to exceed `y`
    Greater,
    Less,
}

impl FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            other => Err(Error::invalid(format!("unknown alternative `{other}`"))),
        }
    }
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::Greater => "greater",
            Alternative::Less => "less",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonResult {
    /// `W+`, the rank sum of the positive differences
    pub statistic: f64,
    pub p_value: f64,
    /// differences kept after dropping zeros
    pub n: usize,
    pub zeros_dropped: usize,
}

/// Average ranks (1-based) of `values`, ties sharing their mean rank.
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

/// One-sided signed-rank test on `x − y`; zero differences are dropped and
/// the p-value is exact over all `2^n` sign assignments.
pub fn wilcoxon(x: &[f64], y: &[f64], alternative: Alternative) -> Result<ComparisonResult> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("paired samples differ in length: {} vs {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::Empty("wilcoxon input"));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let zeros_dropped = x.len() - diffs.len();
    if diffs.is_empty() {
        return Err(Error::AllDifferencesZero);
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("non-finite difference"));
    }
    let n = diffs.len();
    if n > MAX_EXACT_N {
        return Err(Error::invalid(format!("exact test supports n ≤ {MAX_EXACT_N}, got {n}")));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    // doubled ranks are integers even with half-integer average ranks
    let doubled: Vec<usize> = average_ranks(&abs).iter().map(|r| (2.0 * r).round() as usize).collect();
    let observed: usize = doubled.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| *r).sum();

    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u128; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let extreme: u128 = match alternative {
        Alternative::Greater => counts[observed..].iter().sum(),
        Alternative::Less => counts[..=observed].iter().sum(),
    };
    Ok(ComparisonResult {
        statistic: observed as f64 / 2.0,
        p_value: (extreme as f64 / 2f64.powi(n as i32)).min(1.0),
        n,
        zeros_dropped,
    })
}
