//! Per-feature Mann-Whitney tests and Benjamini-Hochberg selection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use super::catalog::FeatureSpec;
use super::compute::FeatureMatrix;

/// Largest pooled sample size that is enumerated exactly.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("both classes must be present")]
    SingleClass,
    #[error("{values} values but {labels} labels")]
    LengthMismatch { values: usize, labels: usize },
    #[error("fdr level must lie in (0, 1), got {0}")]
    InvalidQ(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "K: Serialize + Ord",
    deserialize = "K: Deserialize<'de> + Ord"
))]
pub struct SelectionResult<K = FeatureSpec> {
    #[serde(rename = "q")]
    pub fdr_q: f64,
    pub kept: BTreeSet<K>,
    pub p_values: BTreeMap<K, f64>,
}

/// Midranks (1-based) of `x`, plus the tie correction term Σ(t³ − t).
fn midranks(x: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = rank;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

/// U statistic of the positive class given its rank sum.
fn u_stat(rank_sum: f64, n1: usize) -> f64 {
    rank_sum - (n1 * (n1 + 1)) as f64 / 2.0
}

/// Exact two-sided p-value: the share of all relabelings whose U lies at
/// least as far from its mean as the observed U.
fn exact_p(ranks: &[f64], n1: usize, u_obs: f64) -> f64 {
    let n = ranks.len();
    let mu = (n1 * (n - n1)) as f64 / 2.0;
    let dev = (u_obs - mu).abs() - 1e-9;
    let (mut extreme, mut total) = (0u64, 0u64);
    // Walk all n-bit masks with exactly n1 bits set.
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let rank_sum: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        total += 1;
        if (u_stat(rank_sum, n1) - mu).abs() >= dev {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

/// Two-sided Mann-Whitney p-value for `values` split by `labels`.
///
/// Small samples (n ≤ 12) are enumerated exactly; larger ones use the
/// tie-corrected normal approximation with continuity correction.
pub fn mann_whitney_p(values: &[f64], labels: &[bool]) -> Result<f64, SelectionError> {
    if values.len() != labels.len() {
        return Err(SelectionError::LengthMismatch {
            values: values.len(),
            labels: labels.len(),
        });
    }
    let n = values.len();
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = n - n1;
    if n0 == 0 || n1 == 0 {
        return Err(SelectionError::SingleClass);
    }
    let (ranks, ties) = midranks(values);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = u_stat(rank_sum, n1);
    if n <= EXACT_MAX_N {
        return Ok(exact_p(&ranks, n1, u));
    }
    let (n0f, n1f, nf) = (n0 as f64, n1 as f64, n as f64);
    let mu = n0f * n1f / 2.0;
    let var = n0f * n1f / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(erfc(z / std::f64::consts::SQRT_2).min(1.0))
}

/// Benjamini-Hochberg step-up selection at false discovery rate `q`.
pub fn benjamini_hochberg<K: Ord + Clone>(
    p_values: &BTreeMap<K, f64>,
    q: f64,
) -> Result<SelectionResult<K>, SelectionError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(SelectionError::InvalidQ(q));
    }
    let mut sorted: Vec<f64> = p_values.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let cutoff = sorted
        .iter()
        .enumerate()
        .rev()
        .find(|(i, &p)| p <= (*i + 1) as f64 * q / m)
        .map(|(_, &p)| p);
    let kept = match cutoff {
        Some(c) => p_values
            .iter()
            .filter(|(_, &p)| p <= c)
            .map(|(k, _)| k.clone())
            .collect(),
        None => BTreeSet::new(),
    };
    Ok(SelectionResult {
        fdr_q: q,
        kept,
        p_values: p_values.clone(),
    })
}

/// Tests every matrix column against the labels and applies BH at `q`.
pub fn select_features(
    matrix: &FeatureMatrix,
    labels: &[bool],
    q: f64,
) -> Result<SelectionResult, SelectionError> {
    if matrix.n_rows() != labels.len() {
        return Err(SelectionError::LengthMismatch {
            values: matrix.n_rows(),
            labels: labels.len(),
        });
    }
    let mut p_values = BTreeMap::new();
    for (j, spec) in matrix.catalog.iter().enumerate() {
        p_values.insert(*spec, mann_whitney_p(&matrix.column(j), labels)?);
    }
    benjamini_hochberg(&p_values, q)
}
