//! Wilcoxon signed-rank test for paired samples.
//!
//! Zero differences are dropped and tied absolute differences midranked.
//! The two-sided p-value comes from the exact null distribution (dynamic
//! program over the rank multiset) up to 25 effective pairs and from a
//! normal approximation with continuity and tie correction above that.

use crate::error::{Error, Result};

/// Largest pair count handled by the exact null distribution.
pub const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// min(W+, W-): the smaller signed-rank sum.
    pub statistic: f64,
    /// Two-sided p-value in [0, 1].
    pub p_value: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_effective: usize,
}

/// Midranks of the values' magnitudes: tied runs share their average rank.
fn midranks(magnitudes: &[f64]) -> Vec<f64> {
    let n = magnitudes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| magnitudes[i].total_cmp(&magnitudes[j]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && magnitudes[order[j + 1]] == magnitudes[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; a run spanning sorted positions i..=j shares
        // the mean of those positions' ranks.
        let shared = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// P(W+ <= w) under the null, exactly.
///
/// Doubling every midrank makes the rank sums integers, so the subset-sum
/// counts (at most 2^EXACT_LIMIT, exact in u64 and in f64) enumerate the
/// full sign-flip distribution.
fn exact_cdf_at(ranks: &[f64], w: f64) -> f64 {
    let scaled: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
    let total: u64 = scaled.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    for &s in &scaled {
        for sum in (s..=total).rev() {
            counts[sum as usize] += counts[(sum - s) as usize];
        }
    }
    let w_scaled = (2.0 * w).round() as u64;
    let below: u64 = counts[..=w_scaled.min(total) as usize].iter().sum();
    below as f64 / (1u64 << ranks.len()) as f64
}

/// Abramowitz-Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// P(W+ <= w) by the normal approximation with continuity correction.
///
/// The variance uses the rank sums directly (sum r^2 / 4), which reduces
/// to n(n+1)(2n+1)/24 without ties and absorbs the tie correction with
/// midranks.
fn approx_cdf_at(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let var: f64 = ranks.iter().map(|r| r * r).sum::<f64>() / 4.0;
    normal_cdf((w - mean + 0.5) / var.sqrt())
}

/// Two-sided Wilcoxon signed-rank test of paired samples.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            context: "signed-rank pairs",
            left: x.len(),
            right: y.len(),
        });
    }
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArg("non-finite difference in signed-rank input".into()));
    }
    let n = diffs.len();
    if n < 5 {
        return Err(Error::InsufficientPairs { effective: n });
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&magnitudes);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total = n as f64 * (n as f64 + 1.0) / 2.0;
    let w = w_plus.min(total - w_plus);
    let cdf = if n <= EXACT_LIMIT { exact_cdf_at(&ranks, w) } else { approx_cdf_at(&ranks, w) };
    // The null distribution of W+ is symmetric about total/2, so doubling
    // the lower tail gives the two-sided value.
    let p_value = (2.0 * cdf).min(1.0);
    Ok(WilcoxonResult { statistic: w, p_value, n_effective: n })
}
