//! Significance tests: Pearson chi-squared, Fisher exact, paired permutation
//! and paired t.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::metrics::{mcc, MetricError};

pub const DEFAULT_PERMUTATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    ChiSquared,
    FisherExact,
    Permutation,
    PairedT,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::ChiSquared => "chi_squared",
            TestKind::FisherExact => "fisher_exact",
            TestKind::Permutation => "permutation",
            TestKind::PairedT => "paired_t",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("table has a zero row or column total")]
    EmptyMargin,
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("paired differences have zero variance")]
    ZeroVariance,
    #[error("iteration count must be positive")]
    NoIterations,
    #[error("{} does not accept this data shape", .0.as_str())]
    DataShape(TestKind),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Inputs for [`significance_test`].
pub enum TestData<'a> {
    Table([[u64; 2]; 2]),
    Paired { a: &'a [f64], b: &'a [f64] },
    PermutationLabels {
        a: &'a [i8],
        b: &'a [i8],
        iterations: usize,
        seed: u64,
    },
}

pub fn significance_test(kind: TestKind, data: TestData<'_>) -> Result<TestResult, StatsError> {
    match (kind, data) {
        (TestKind::ChiSquared, TestData::Table(t)) => chi_squared(t),
        (TestKind::FisherExact, TestData::Table(t)) => Ok(fisher_exact(t)),
        (TestKind::PairedT, TestData::Paired { a, b }) => paired_t(a, b),
        (TestKind::Permutation, TestData::PermutationLabels { a, b, iterations, seed }) => {
            permutation_mcc(a, b, iterations, seed)
        }
        (TestKind::Permutation, TestData::Paired { a, b }) => {
            permutation_test(a, b, DEFAULT_PERMUTATIONS, 0, mean_difference)
        }
        (kind, _) => Err(StatsError::DataShape(kind)),
    }
}

/// Pearson statistic without continuity correction, 1 degree of freedom.
pub fn chi_squared(table: [[u64; 2]; 2]) -> Result<TestResult, StatsError> {
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let n = rows[0] + rows[1];
    if rows.contains(&0) || cols.contains(&0) {
        return Err(StatsError::EmptyMargin);
    }
    let mut stat = 0.0;
    let mut min_expected = f64::INFINITY;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = rows[i] as f64 * cols[j] as f64 / n as f64;
            min_expected = min_expected.min(expected);
            stat += (obs as f64 - expected).powi(2) / expected;
        }
    }
    let dist = ChiSquared::new(1.0).expect("1 df");
    Ok(TestResult {
        kind: TestKind::ChiSquared,
        statistic: stat,
        p_value: dist.sf(stat).clamp(0.0, 1.0),
        n: n as usize,
        warning: (min_expected < 1.0).then(|| format!("expected count {min_expected:.3} below 1")),
    })
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(0.0);
    for k in 1..=n {
        out.push(out[k as usize - 1] + (k as f64).ln());
    }
    out
}

/// Two-sided Fisher exact test: total probability of tables with the
/// observed margins that are no more likely than the observed table.
pub fn fisher_exact(table: [[u64; 2]; 2]) -> TestResult {
    let [[a, b], [c, d]] = table;
    let (r0, r1, c0) = (a + b, c + d, a + c);
    let n = r0 + r1;
    let lf = ln_factorials(n);
    let ln_p = |x: u64| {
        lf[r0 as usize] + lf[r1 as usize] + lf[c0 as usize] + lf[(n - c0) as usize]
            - lf[n as usize]
            - lf[x as usize]
            - lf[(r0 - x) as usize]
            - lf[(c0 - x) as usize]
            - lf[(r1 + x - c0) as usize]
    };
    let lo = c0.saturating_sub(r1);
    let hi = r0.min(c0);
    let observed = ln_p(a).exp();
    let threshold = observed * (1.0 + 1e-7);
    let p: f64 = (lo..=hi).map(|x| ln_p(x).exp()).filter(|p| *p <= threshold).sum();
    let odds = if b == 0 || c == 0 {
        f64::INFINITY
    } else {
        (a as f64 * d as f64) / (b as f64 * c as f64)
    };
    TestResult {
        kind: TestKind::FisherExact,
        statistic: odds,
        p_value: p.clamp(0.0, 1.0),
        n: n as usize,
        warning: None,
    }
}

/// Two-sided paired t on `a − b`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var <= f64::EPSILON * f64::EPSILON * (1.0 + mean * mean) {
        return Err(StatsError::ZeroVariance);
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive df");
    let p = 2.0 * dist.sf(t.abs());
    Ok(TestResult {
        kind: TestKind::PairedT,
        statistic: t,
        p_value: p.clamp(0.0, 1.0),
        n,
        warning: None,
    })
}

fn mean_difference(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / a.len().max(1) as f64
}

/// Pair-permutation test: `b` is shuffled against a fixed `a` and the
/// statistic recomputed. p = (1 + #{|perm| ≥ |obs|}) / (1 + iterations).
pub fn permutation_test<T: Clone>(
    a: &[T],
    b: &[T],
    iterations: usize,
    seed: u64,
    statistic: impl Fn(&[T], &[T]) -> f64,
) -> Result<TestResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: a.len() });
    }
    if iterations == 0 {
        return Err(StatsError::NoIterations);
    }
    let observed = statistic(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = b.to_vec();
    // Tolerance keeps ties that differ only by rounding counted as exceedances.
    let bar = observed.abs() - 1e-12;
    let mut exceed = 0usize;
    for _ in 0..iterations {
        shuffled.shuffle(&mut rng);
        if statistic(a, &shuffled).abs() >= bar {
            exceed += 1;
        }
    }
    Ok(TestResult {
        kind: TestKind::Permutation,
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + iterations) as f64,
        n: a.len(),
        warning: None,
    })
}

/// Permutation test with MCC as the statistic.
pub fn permutation_mcc(a: &[i8], b: &[i8], iterations: usize, seed: u64) -> Result<TestResult, StatsError> {
    mcc(a, b)?;
    permutation_test(a, b, iterations, seed, |x, y| mcc(x, y).map(|m| m.value).unwrap_or(0.0))
}
