//! Ranking agreement between predicted and true anomaly scores.
//!
//! The agreement score is the fraction of concordant pairs among all pairs
//! whose true scores differ; predicted ties earn half credit. With a binary
//! truth it is the ROC AUC, and both are computed from the same integer
//! counts so the two agree bit for bit.

mod experiment;

pub use experiment::{
    repeat_experiment, repeat_with_seeds, run_once, DataSource, ExperimentConfig, ExperimentTable,
    Method, MethodSummary, RunRecord, TABLE_HEADER,
};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub score: f64,
    /// Pairs with distinct true scores.
    pub n_pairs: u64,
}

/// Fenwick tree over dense ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Self(vec![0; n + 1])
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks strictly below `rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i &= i - 1;
        }
        s
    }
}

fn check_comparable(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter(format!("{what} contain NaN")));
    }
    Ok(())
}

fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.partial_cmp(b).expect("NaN filtered")
}

/// Dense ranks (0-based) with equal values sharing a rank; `-0.0 == 0.0`.
fn dense_ranks(values: &[f64]) -> (Vec<usize>, usize) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp_f64(&values[a], &values[b]));
    let mut ranks = vec![0; values.len()];
    let mut rank = 0;
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && values[i] != values[order[pos - 1]] {
            rank += 1;
        }
        ranks[i] = rank;
    }
    (ranks, if values.is_empty() { 0 } else { rank + 1 })
}

/// Doubled concordance count `2 C + T` and the number of comparable pairs.
fn concordance(predicted: &[f64], truth: &[f64]) -> (u64, u64) {
    let (pred_rank, n_ranks) = dense_ranks(predicted);
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| cmp_f64(&truth[a], &truth[b]));

    let mut tree = Fenwick::new(n_ranks);
    let mut inserted = 0u64;
    let (mut twice_concordant, mut pairs) = (0u64, 0u64);
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && truth[order[end]] == truth[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            let r = pred_rank[i];
            let less = tree.below(r);
            let tied = tree.below(r + 1) - less;
            twice_concordant += 2 * less + tied;
        }
        pairs += inserted * (end - start) as u64;
        for &i in &order[start..end] {
            tree.add(pred_rank[i]);
        }
        inserted += (end - start) as u64;
        start = end;
    }
    (twice_concordant, pairs)
}

/// Fraction of truth-ordered pairs that the prediction orders the same way.
pub fn agreement_score(predicted: &[f64], truth: &[f64]) -> Result<AgreementResult> {
    check_len(truth.len(), predicted.len())?;
    if truth.len() < 2 {
        return Err(Error::InvalidParameter(
            "agreement needs at least two instances".into(),
        ));
    }
    check_comparable(predicted, "predicted scores")?;
    check_comparable(truth, "true scores")?;
    let (twice_concordant, n_pairs) = concordance(predicted, truth);
    if n_pairs == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(AgreementResult {
        score: twice_concordant as f64 / (2 * n_pairs) as f64,
        n_pairs,
    })
}

/// Area under the ROC curve, `true` marking the class expected to score higher.
///
/// Computed from the Mann-Whitney rank sum with midranks kept as doubled
/// integers.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    check_len(truth.len(), scores.len())?;
    check_comparable(scores, "scores")?;
    let n_pos = truth.iter().filter(|&&t| t).count() as u64;
    let n_neg = truth.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels(
            "ROC AUC needs both truth classes".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| cmp_f64(&scores[a], &scores[b]));
    let mut twice_rank_sum = 0u64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share the midrank (start + 1 + end) / 2
        let twice_midrank = (start + 1 + end) as u64;
        let positives = order[start..end].iter().filter(|&&i| truth[i]).count() as u64;
        twice_rank_sum += positives * twice_midrank;
        start = end;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// [`roc_auc`] under the name used for per-feature discrimination.
pub(crate) fn auc_from_scores(scores: &[f64], positives: &[bool]) -> Result<f64> {
    roc_auc(scores, positives)
}

/// Mean and sample variance over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub mean: f64,
    pub variance: f64,
}

impl Summary {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            runs: n,
            mean,
            variance,
        }
    }
}
