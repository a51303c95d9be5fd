//! Exact paired two-sided sign tests and Holm family correction.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::aggregate::{pairwise_meeting_diffs, BenchmarkRow, Metric};
use crate::error::Result;
use crate::model::ModelLabel;

/// One pairwise model comparison under one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTestResult {
    pub metric: Metric,
    pub model_a: String,
    pub model_b: String,
    pub mean_diff: f64,
    pub a_wins: u64,
    pub ties: u64,
    pub b_wins: u64,
    pub p_raw: f64,
    pub p_holm: f64,
    pub significant_at_05: bool,
}

/// Exact two-sided sign test p-value: doubled smaller binomial tail under
/// p = 1/2, clipped at 1. Ties must already be excluded. Symmetric in its
/// arguments. `(0, 0)` is defined as p = 1 (no informative pairs).
pub fn exact_sign_test(a_wins: u64, b_wins: u64) -> f64 {
    let n = a_wins + b_wins;
    if n == 0 {
        return 1.0;
    }
    let k = a_wins.min(b_wins);
    // tail = sum_{i=0..k} C(n, i), accumulated with exact big integers
    let mut tail = BigUint::zero();
    let mut binom = BigUint::one();
    for i in 0..=k {
        tail += &binom;
        // C(n, i+1) = C(n, i) * (n - i) / (i + 1)
        binom = binom * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    let doubled: BigUint = tail << 1;
    let denom = BigUint::one() << n as usize;
    if doubled >= denom {
        return 1.0;
    }
    // Both values fit comfortably in f64 range for any realistic benchmark;
    // the ratio is what matters.
    let num = doubled.to_f64().unwrap_or(f64::INFINITY);
    let den = denom.to_f64().unwrap_or(f64::INFINITY);
    (num / den).min(1.0)
}

/// Holm step-down adjustment. Returns adjusted p-values in input order:
/// sort ascending, adjusted(i) = max over j <= i of min(1, (m - j)·p_(j))
/// with j the 0-based rank.
pub fn holm_correct(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &idx) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * p_values[idx]).min(1.0);
        running = running.max(scaled);
        adjusted[idx] = running;
    }
    adjusted
}

/// All unordered model pairs per metric, with ties excluded from the test and
/// Holm correction applied within each metric family only.
pub fn significance_table(
    rows: &[BenchmarkRow],
    models: &[ModelLabel],
    metrics: &[Metric],
) -> Result<Vec<SignTestResult>> {
    let mut results = Vec::new();
    for &metric in metrics {
        let mut family = Vec::new();
        for i in 0..models.len() {
            for j in (i + 1)..models.len() {
                let diffs = pairwise_meeting_diffs(rows, metric, &models[i], &models[j])?;
                let p_raw = exact_sign_test(diffs.a_wins, diffs.b_wins);
                family.push(SignTestResult {
                    metric,
                    model_a: models[i].report_label.clone(),
                    model_b: models[j].report_label.clone(),
                    mean_diff: diffs.mean_diff,
                    a_wins: diffs.a_wins,
                    ties: diffs.ties,
                    b_wins: diffs.b_wins,
                    p_raw,
                    p_holm: 0.0,
                    significant_at_05: false,
                });
            }
        }
        let raw: Vec<f64> = family.iter().map(|r| r.p_raw).collect();
        let adjusted = holm_correct(&raw);
        for (r, p_holm) in family.iter_mut().zip(adjusted) {
            r.p_holm = p_holm;
            r.significant_at_05 = p_holm < 0.05;
        }
        results.extend(family);
    }
    Ok(results)
}

/// Significance over externally supplied win/tie/loss counts, Holm-corrected
/// within each metric family in input order. `mean_diff` is not derivable
/// from counts and reports 0.
pub fn significance_from_counts(
    entries: &[(Metric, String, String, u64, u64, u64)],
) -> Vec<SignTestResult> {
    let mut results: Vec<SignTestResult> = entries
        .iter()
        .map(|(metric, a, b, a_wins, ties, b_wins)| SignTestResult {
            metric: *metric,
            model_a: a.clone(),
            model_b: b.clone(),
            mean_diff: 0.0,
            a_wins: *a_wins,
            ties: *ties,
            b_wins: *b_wins,
            p_raw: exact_sign_test(*a_wins, *b_wins),
            p_holm: 0.0,
            significant_at_05: false,
        })
        .collect();
    for metric in Metric::ALL {
        let indices: Vec<usize> = results
            .iter()
            .enumerate()
            .filter(|(_, r)| r.metric == metric)
            .map(|(i, _)| i)
            .collect();
        let raw: Vec<f64> = indices.iter().map(|&i| results[i].p_raw).collect();
        for (&i, p_holm) in indices.iter().zip(holm_correct(&raw)) {
            results[i].p_holm = p_holm;
            results[i].significant_at_05 = p_holm < 0.05;
        }
    }
    results
}
