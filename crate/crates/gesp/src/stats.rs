//! Rank statistics for comparing groups of runs.
//!
//! The workhorse is the Mann-Whitney U test with midranks for ties. Small,
//! tie-free samples get the exact null distribution (dynamic programming over
//! arrangement counts); everything else uses the normal approximation with
//! tie-corrected variance and a 0.5 continuity correction. Quantiles use the
//! linear-interpolation convention (`h = (n - 1) p`), matching the default of
//! the common numerical packages.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::Scalar;

/// Largest small-side sample size for which the exact distribution is used.
const EXACT_LIMIT: usize = 8;

/// Direction of the alternative hypothesis, phrased about the first sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    /// The two samples differ in location (either direction).
    TwoSided,
    /// Values in the first sample tend to be larger.
    Greater,
    /// Values in the first sample tend to be smaller.
    Less,
}

/// Which computation produced the p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMethod {
    /// Exact arrangement-count distribution (small samples, no ties).
    ExactDistribution,
    /// Normal approximation with tie correction and continuity correction.
    NormalApproximation,
}

/// Outcome of a Mann-Whitney U test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitneyResult {
    /// U statistic of the first sample.
    pub u_first: f64,
    /// U statistic of the second sample (`n * m - u_first`).
    pub u_second: f64,
    /// p-value under the requested alternative, in `[0, 1]`.
    pub p_value: f64,
    /// Whether the exact distribution or the approximation was used.
    pub method: TestMethod,
}

/// Midranks of the pooled sample: ties share the average of the rank
/// positions they occupy. Returned in pooled input order, ranks start at 1.
fn midranks(pooled: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].partial_cmp(&pooled[b]).expect("finite values"));
    let mut ranks = vec![0.0; pooled.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && pooled[order[end + 1]] == pooled[order[start]] {
            end += 1;
        }
        // Positions start..=end (0-based) hold equal values; average their
        // 1-based ranks.
        let midrank = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            ranks[idx] = midrank;
        }
        start = end + 1;
    }
    ranks
}

/// Sum over tie groups of `t^3 - t`, the correction term for the variance of
/// the rank sum under ties.
fn tie_correction_term(pooled_sorted: &[f64]) -> f64 {
    let mut term = 0.0;
    let mut start = 0;
    while start < pooled_sorted.len() {
        let mut end = start;
        while end + 1 < pooled_sorted.len() && pooled_sorted[end + 1] == pooled_sorted[start] {
            end += 1;
        }
        let t = (end - start + 1) as f64;
        term += t * t * t - t;
        start = end + 1;
    }
    term
}

/// Exact null probability P(U <= u) for group sizes (n, m) without ties.
///
/// Uses the arrangement-count recurrence obtained by conditioning on whether
/// the largest pooled value belongs to the first group (it then beats all `m`
/// opponents) or the second (it beats none):
/// `count(n, m, u) = count(n-1, m, u-m) + count(n, m-1, u)`.
fn exact_cumulative_probability(n: usize, m: usize, u: usize) -> f64 {
    let cap = n * m;
    let idx = |i: usize, j: usize, v: usize| (i * (m + 1) + j) * (cap + 1) + v;
    let mut counts = vec![0.0f64; (n + 1) * (m + 1) * (cap + 1)];
    for j in 0..=m {
        counts[idx(0, j, 0)] = 1.0;
    }
    for i in 1..=n {
        counts[idx(i, 0, 0)] = 1.0;
        for j in 1..=m {
            for v in 0..=cap {
                let with_first_on_top = if v >= j { counts[idx(i - 1, j, v - j)] } else { 0.0 };
                let with_second_on_top = counts[idx(i, j - 1, v)];
                counts[idx(i, j, v)] = with_first_on_top + with_second_on_top;
            }
        }
    }
    let total: f64 = (0..=cap).map(|v| counts[idx(n, m, v)]).sum();
    let cumulative: f64 = (0..=u.min(cap)).map(|v| counts[idx(n, m, v)]).sum();
    cumulative / total
}

/// Two-sample Mann-Whitney U test.
///
/// Panics on empty samples or non-finite values. When both samples are
/// tie-free and the smaller one has at most eight elements, the p-value comes
/// from the exact distribution; otherwise from the continuity-corrected
/// normal approximation with tie-corrected variance. A pooled sample with no
/// variation at all (every value identical) yields `p = 1.0`.
pub fn mann_whitney<S: Scalar>(first: &[S], second: &[S], alternative: Alternative) -> MannWhitneyResult {
    assert!(!first.is_empty(), "first sample is empty");
    assert!(!second.is_empty(), "second sample is empty");
    let n = first.len();
    let m = second.len();
    let pooled: Vec<f64> = first
        .iter()
        .chain(second.iter())
        .map(|v| {
            assert!(v.is_finite(), "non-finite sample value {v}");
            v.to_f64().expect("sample value convertible")
        })
        .collect();

    let ranks = midranks(&pooled);
    let rank_sum_first: f64 = ranks[..n].iter().sum();
    let u_first = rank_sum_first - (n * (n + 1)) as f64 / 2.0;
    let u_second = (n * m) as f64 - u_first;

    let mut sorted = pooled.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let tie_term = tie_correction_term(&sorted);
    let has_ties = tie_term > 0.0;

    if !has_ties && n.min(m) <= EXACT_LIMIT {
        // Without ties both U statistics are integers.
        let p_value = match alternative {
            Alternative::TwoSided => {
                let u_min = u_first.min(u_second) as usize;
                (2.0 * exact_cumulative_probability(n, m, u_min)).min(1.0)
            }
            // P(U_first >= u) equals P(U <= u_second) by the symmetry of the
            // null distribution.
            Alternative::Greater => exact_cumulative_probability(n, m, u_second as usize),
            Alternative::Less => exact_cumulative_probability(n, m, u_first as usize),
        };
        return MannWhitneyResult { u_first, u_second, p_value, method: TestMethod::ExactDistribution };
    }

    let total = (n + m) as f64;
    let mean = (n * m) as f64 / 2.0;
    let variance =
        (n * m) as f64 / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    let sigma = variance.max(0.0).sqrt();
    if sigma == 0.0 {
        // Every pooled value identical: no evidence for any alternative.
        return MannWhitneyResult { u_first, u_second, p_value: 1.0, method: TestMethod::NormalApproximation };
    }

    let standard_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p_value = match alternative {
        Alternative::TwoSided => {
            let z = (u_first.max(u_second) - mean - 0.5) / sigma;
            (2.0 * (1.0 - standard_normal.cdf(z))).min(1.0)
        }
        Alternative::Greater => {
            let z = (u_first - mean - 0.5) / sigma;
            1.0 - standard_normal.cdf(z)
        }
        Alternative::Less => {
            let z = (u_first - mean + 0.5) / sigma;
            standard_normal.cdf(z)
        }
    };
    MannWhitneyResult { u_first, u_second, p_value, method: TestMethod::NormalApproximation }
}

/// Quantile by linear interpolation between order statistics: with `n`
/// values, the quantile at `p` sits at fractional position `(n - 1) p` of the
/// sorted data. Panics on an empty slice, non-finite values, or `p` outside
/// `[0, 1]`.
pub fn quantile<S: Scalar>(values: &[S], p: f64) -> S {
    assert!(!values.is_empty(), "quantile of an empty slice");
    assert!((0.0..=1.0).contains(&p), "quantile level {p} outside [0, 1]");
    let mut sorted: Vec<S> = values.to_vec();
    for v in &sorted {
        assert!(v.is_finite(), "non-finite value {v} in quantile input");
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let position = (sorted.len() - 1) as f64 * p;
    let lower = position.floor() as usize;
    let upper = (lower + 1).min(sorted.len() - 1);
    let fraction = crate::from_f64::<S>(position - lower as f64);
    sorted[lower] + fraction * (sorted[upper] - sorted[lower])
}

/// Median (the 0.5 quantile).
pub fn median<S: Scalar>(values: &[S]) -> S {
    quantile(values, 0.5)
}

/// First quartile, median, third quartile.
pub fn quartiles<S: Scalar>(values: &[S]) -> (S, S, S) {
    (quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75))
}

/// One run's best-so-far objective at each shared budget checkpoint; `None`
/// where the run had not yet completed any full evaluation.
pub type CheckpointSeries<S> = Vec<Option<S>>;

/// Median and quartiles of one group at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSummary<S> {
    pub median: S,
    pub q25: S,
    pub q75: S,
}

impl<S: Scalar> GroupSummary<S> {
    fn of(values: &[S]) -> Self {
        let (q25, median, q75) = quartiles(values);
        GroupSummary { median, q25, q75 }
    }
}

/// Per-checkpoint comparison of two groups of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow<S> {
    /// Budget (environment steps) of this checkpoint.
    pub checkpoint_budget: u64,
    /// Location summary of group A (None if no run has a value yet).
    pub a: Option<GroupSummary<S>>,
    /// Location summary of group B.
    pub b: Option<GroupSummary<S>>,
    /// Two-sided Mann-Whitney p-value; absent unless both groups have at
    /// least two runs with a value at this checkpoint.
    pub p_value: Option<f64>,
    /// Whether `p_value` is present and below the significance level.
    pub significant: bool,
}

/// Compare two groups of runs checkpoint by checkpoint with a two-sided
/// Mann-Whitney test at significance level `alpha`. Runs that have no value
/// yet at a checkpoint are excluded from that checkpoint's test; a test is
/// only run when both groups retain at least two values.
pub fn compare_at_checkpoints<S: Scalar>(
    checkpoints: &[u64],
    group_a: &[CheckpointSeries<S>],
    group_b: &[CheckpointSeries<S>],
    alpha: f64,
) -> Vec<ComparisonRow<S>> {
    assert!((0.0..=1.0).contains(&alpha), "significance level {alpha} outside [0, 1]");
    for series in group_a.iter().chain(group_b.iter()) {
        assert_eq!(series.len(), checkpoints.len(), "series length must match the checkpoint grid");
    }
    checkpoints
        .iter()
        .enumerate()
        .map(|(i, &checkpoint_budget)| {
            let values_a: Vec<S> = group_a.iter().filter_map(|s| s[i]).collect();
            let values_b: Vec<S> = group_b.iter().filter_map(|s| s[i]).collect();
            let a = if values_a.is_empty() { None } else { Some(GroupSummary::of(&values_a)) };
            let b = if values_b.is_empty() { None } else { Some(GroupSummary::of(&values_b)) };
            let p_value = if values_a.len() >= 2 && values_b.len() >= 2 {
                Some(mann_whitney(&values_a, &values_b, Alternative::TwoSided).p_value)
            } else {
                None
            };
            let significant = p_value.is_some_and(|p| p < alpha);
            ComparisonRow { checkpoint_budget, a, b, p_value, significant }
        })
        .collect()
}

fn push_summary_cells<S: Scalar>(out: &mut String, summary: &Option<GroupSummary<S>>) {
    match summary {
        Some(s) => {
            let _ = write!(out, "{},{},{}", s.median, s.q25, s.q75);
        }
        None => out.push_str(",,"),
    }
}

/// Write comparison rows as CSV. Missing group summaries and p-values become
/// empty cells; `significant` is `true`/`false`.
pub fn write_comparison_csv<S: Scalar>(path: &Path, rows: &[ComparisonRow<S>]) -> io::Result<()> {
    let mut out =
        String::from("checkpoint_budget,median_a,q25_a,q75_a,median_b,q25_b,q75_b,p_value,significant\n");
    for row in rows {
        let _ = write!(out, "{},", row.checkpoint_budget);
        push_summary_cells(&mut out, &row.a);
        out.push(',');
        push_summary_cells(&mut out, &row.b);
        out.push(',');
        if let Some(p) = row.p_value {
            let _ = write!(out, "{p}");
        }
        let _ = writeln!(out, ",{}", row.significant);
    }
    fs::write(path, out)
}
