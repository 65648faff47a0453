//! Small statistical tests: ICC(2,1), McNemar-Bowker, two-sample
//! Kolmogorov-Smirnov, Wilcoxon rank-sum and Levenshtein distance.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("rating matrix needs >= 2 subjects and >= 2 raters with equal row lengths")]
    InvalidMatrix,
    #[error("ICC denominator is zero")]
    DegenerateMatrix,
    #[error("contingency table is not square")]
    NonSquare,
    #[error("sample is empty")]
    EmptySample,
}

/// Conventions echoed into reports.
pub const WILCOXON_CONVENTION: &str =
    "Mann-Whitney U of the first sample; mid-ranks for ties with tie-corrected variance; two-sided normal approximation with 0.5 continuity correction";
pub const KS_CONVENTION: &str = "asymptotic Kolmogorov p-value with effective n = n_x*n_y/(n_x+n_y)";
pub const BOWKER_CONVENTION: &str = "pairs with n_ij + n_ji = 0 excluded from chi-square and df";

/// Two-way random-effects, absolute-agreement, single-rater ICC.
/// `rows[i][j]` is subject `i` scored by rater `j`.
pub fn icc_2_1(rows: &[Vec<f64>]) -> Result<f64, StatsError> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if n < 2 || k < 2 || rows.iter().any(|r| r.len() != k) {
        return Err(StatsError::InvalidMatrix);
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = rows.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let ssr = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ssc = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let sst: f64 = rows.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let sse = (sst - ssr - ssc).max(0.0);
    let msr = ssr / (nf - 1.0);
    let msc = ssc / (kf - 1.0);
    let mse = sse / ((nf - 1.0) * (kf - 1.0));
    let denom = msr + (kf - 1.0) * mse + (kf / nf) * (msc - mse);
    if denom == 0.0 {
        return Err(StatsError::DegenerateMatrix);
    }
    Ok((msr - mse) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
}

/// Bowker's symmetry test on a square contingency table.
pub fn mcnemar_bowker(table: &[Vec<u64>]) -> Result<ChiSquareTest, StatsError> {
    let r = table.len();
    if table.iter().any(|row| row.len() != r) {
        return Err(StatsError::NonSquare);
    }
    let mut stat = 0.0;
    let mut df = 0usize;
    for i in 0..r {
        for j in i + 1..r {
            let (a, b) = (table[i][j] as f64, table[j][i] as f64);
            if a + b > 0.0 {
                stat += (a - b).powi(2) / (a + b);
                df += 1;
            }
        }
    }
    Ok(ChiSquareTest { statistic: stat, df, p: chi_square_sf(stat, df) })
}

/// Upper tail of the chi-square distribution; 1 at df = 0.
pub fn chi_square_sf(x: f64, df: usize) -> f64 {
    if df == 0 || x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).map(|d| d.sf(x)).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub d: f64,
    pub p: f64,
}

/// Kolmogorov survival function `Q(lambda) = P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form converges quickly for small lambda
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20).map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp()).sum();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsTest, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < n && j < m {
        let v = xs[i].min(ys[j]);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = (n * m) as f64 / (n + m) as f64;
    Ok(KsTest { d, p: kolmogorov_sf(en.sqrt() * d) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSumTest {
    /// U of the first sample: pairs `(x, y)` with `x > y`, ties counting half.
    pub u: f64,
    pub z: f64,
    pub p: f64,
}

/// Mid-ranks of `values` (1-based) and the tie term `sum(t^3 - t)`.
pub fn mid_ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        let t = (end - start) as f64;
        ties += t * t * t - t;
        start = end;
    }
    (ranks, ties)
}

pub fn wilcoxon_rank_sum(x: &[f64], y: &[f64]) -> Result<RankSumTest, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let (n, m) = (x.len() as f64, y.len() as f64);
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = mid_ranks(&pooled);
    let rx: f64 = ranks[..x.len()].iter().sum();
    let u = rx - n * (n + 1.0) / 2.0;
    let total = n + m;
    let mean = n * m / 2.0;
    let var = n * m / 12.0 * ((total + 1.0) - ties / (total * (total - 1.0)));
    if var <= 0.0 {
        return Ok(RankSumTest { u, z: 0.0, p: 1.0 });
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt() * (u - mean).signum();
    let p = (2.0 * Normal::standard().sf(z.abs())).min(1.0);
    Ok(RankSumTest { u, z, p })
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
