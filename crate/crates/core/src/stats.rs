//! Chi-square tests used by the adversary harness and the test suites.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

impl ChiSquare {
    fn from_statistic(statistic: f64, dof: f64) -> Self {
        let p_value = if dof <= 0.0 {
            1.0
        } else {
            ChiSquared::new(dof).map(|d| d.sf(statistic)).unwrap_or(f64::NAN)
        };
        ChiSquare { statistic, dof, p_value }
    }
}

/// Goodness of fit of `counts` against the uniform distribution over its bins.
pub fn uniformity(counts: &[u64]) -> ChiSquare {
    let total: u64 = counts.iter().sum();
    if counts.len() < 2 || total == 0 {
        return ChiSquare::from_statistic(0.0, 0.0);
    }
    let expected = total as f64 / counts.len() as f64;
    let statistic = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    ChiSquare::from_statistic(statistic, (counts.len() - 1) as f64)
}

/// Two-sample homogeneity test: were `a` and `b` drawn from the same
/// categorical distribution? Bins empty in both samples are dropped.
pub fn homogeneity(a: &[u64], b: &[u64]) -> ChiSquare {
    assert_eq!(a.len(), b.len(), "histograms must share bins");
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return ChiSquare::from_statistic(0.0, 0.0);
    }
    let n = (na + nb) as f64;
    let mut statistic = 0.0;
    let mut bins = 0usize;
    for (&ca, &cb) in a.iter().zip(b) {
        let col = (ca + cb) as f64;
        if col == 0.0 {
            continue;
        }
        bins += 1;
        let ea = col * na as f64 / n;
        let eb = col * nb as f64 / n;
        statistic += (ca as f64 - ea).powi(2) / ea + (cb as f64 - eb).powi(2) / eb;
    }
    ChiSquare::from_statistic(statistic, bins.saturating_sub(1) as f64)
}

/// Histogram of values in `[0, domain)` over `bins` equal-width bins.
/// `domain` must be a multiple of `bins`.
pub fn histogram(values: impl IntoIterator<Item = u64>, domain: u64, bins: usize) -> Vec<u64> {
    assert!(bins > 0 && domain.is_multiple_of(bins as u64), "domain {domain} not divisible into {bins} bins");
    let width = domain / bins as u64;
    let mut counts = vec![0u64; bins];
    for v in values {
        counts[(v / width) as usize] += 1;
    }
    counts
}

/// Bin count for a leaf histogram: a power of two no larger than the leaf
/// count, keeping at least ~50 expected samples per bin.
pub fn leaf_bins(leaf_count: u64, samples: usize) -> usize {
    let mut bins = leaf_count.min(1024) as usize;
    while bins > 2 && samples / bins < 50 {
        bins /= 2;
    }
    bins.max(1)
}
