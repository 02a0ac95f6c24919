//! Small descriptive and rank statistics used by evaluation and diagnostics.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, log, sqrt};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); `0` for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    sqrt(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

/// Standard error of the mean.
pub fn std_err(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    std_dev(xs) / sqrt(xs.len() as f64)
}

/// Pearson correlation, `None` when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / sqrt(sxx * syy))
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    pearson(&ranks(xs), &ranks(ys))
}

/// Area under the ROC curve for scores of a positive and a negative class
/// (ties count one half).
pub fn auc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in positives {
        for n in negatives {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (positives.len() * negatives.len()) as f64)
}

/// `P(X ≥ k)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_upper_tail(n: u64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let ln_half_n = n as f64 * log(0.5);
    let ln_fact = |m: u64| libm::lgamma(m as f64 + 1.0);
    let total: f64 = (k..=n).map(|i| exp(ln_fact(n) - ln_fact(i) - ln_fact(n - i) + ln_half_n)).sum();
    total.min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    pub negatives: u64,
    pub positives: u64,
    pub ties: u64,
    /// One-sided p-value for the alternative "differences tend to be negative".
    pub p_value: f64,
}

/// Paired sign test on differences `d_i`, ties dropped.
pub fn sign_test_negative(diffs: &[f64]) -> SignTest {
    let negatives = diffs.iter().filter(|d| **d < 0.0).count() as u64;
    let positives = diffs.iter().filter(|d| **d > 0.0).count() as u64;
    let ties = diffs.len() as u64 - negatives - positives;
    SignTest { negatives, positives, ties, p_value: binomial_upper_tail(negatives + positives, negatives) }
}
