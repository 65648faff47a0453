//! Maximum-likelihood discrete-choice models.
//!
//! - conditional logit stratified on the choice set, Newton-Raphson with
//!   step halving, cluster-robust (sandwich) covariance and Nagelkerke R²
//! - Plackett-Luce worths with delta-method intervals ([`plackett_luce`])
//! - rank-ordered (exploded) logit ([`rank_ordered`])
//! - builders from trials, including position-bias designs ([`design`])
//! - clustered OLS and Benjamini-Hochberg adjustment
//!
//! With exactly one chosen alternative per stratum there are no tied
//! events, so Efron's tie correction does not apply.

pub mod design;
pub mod plackett_luce;
pub mod rank_ordered;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::exec::Exec;

pub use plackett_luce::{fit_plackett_luce, PlackettLuceFit};
pub use rank_ordered::{explode_rankings, fit_rank_ordered_logit, RankedSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid choice data: {0}")]
    InvalidData(String),
    #[error("likelihood is unbounded (separation) in: {}", .0.join(", "))]
    Separation(Vec<String>),
    #[error("design is rank deficient: {0}")]
    RankDeficient(String),
    #[error("no convergence after {0} iterations")]
    NonConvergence(usize),
    #[error("p-value {0} outside [0,1]")]
    OutOfRange(f64),
    #[error("unknown coefficient {0:?}")]
    UnknownCoefficient(String),
}

/// One alternative within a choice set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceObservation {
    pub stratum: String,
    pub alternative: String,
    pub covariates: Vec<f64>,
    pub chosen: bool,
    pub cluster: String,
}

/// Observations sharing one covariate naming.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChoiceData {
    pub names: Vec<String>,
    pub observations: Vec<ChoiceObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub rel_ll_tol: f64,
    pub grad_tol: f64,
    /// |beta|_inf beyond which a still-improving fit is declared separated.
    pub separation_bound: f64,
    pub ridge: f64,
    pub exec: Exec,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 200, rel_ll_tol: 1e-10, grad_tol: 1e-8, separation_bound: 30.0, ridge: 1e-8, exec: Exec::Sequential }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub p_fdr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub odds_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub or_ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub or_ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub ll_trace: Vec<f64>,
    pub ridge_applied: bool,
    pub dropped_columns: Vec<String>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub coefficients: Vec<Coefficient>,
    /// Cluster-robust covariance of the retained coefficients.
    pub covariance: Vec<Vec<f64>>,
    /// Inverse observed information.
    pub model_covariance: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub n_strata: usize,
    pub n_observations: usize,
    pub n_clusters: usize,
    pub nagelkerke_r2: f64,
    pub convergence: Convergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub weights: Vec<(String, f64)>,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }

    /// Wald test of a linear combination of coefficients using the robust covariance.
    pub fn contrast(&self, weights: &[(&str, f64)]) -> Result<Contrast, FitError> {
        let k = self.coefficients.len();
        let mut w = vec![0.0; k];
        for (name, v) in weights {
            let i = self
                .coefficients
                .iter()
                .position(|c| c.name == *name)
                .ok_or_else(|| FitError::UnknownCoefficient(name.to_string()))?;
            w[i] += v;
        }
        let estimate: f64 = w.iter().zip(&self.coefficients).map(|(a, c)| a * c.estimate).sum();
        let mut var = 0.0;
        for i in 0..k {
            for j in 0..k {
                var += w[i] * self.covariance[i][j] * w[j];
            }
        }
        let se = var.max(0.0).sqrt();
        let z = estimate / se;
        Ok(Contrast {
            weights: weights.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
            estimate,
            se,
            z,
            p: two_sided_p(z),
        })
    }
}

pub(crate) const Z95: f64 = 1.959_963_984_540_054;

/// Two-sided normal p-value.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Benjamini-Hochberg step-up adjustment with monotonicity enforced.
pub fn fdr_adjust(p_values: &[f64]) -> Result<Vec<f64>, FitError> {
    if let Some(&bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(FitError::OutOfRange(bad));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(p_values[i] * m as f64 / (rank + 1) as f64).min(1.0);
        adjusted[i] = running;
    }
    Ok(adjusted)
}

/// Stratum index built from [`ChoiceData`].
#[derive(Debug, Clone)]
pub(crate) struct Strata {
    pub rows: Vec<Vec<usize>>,
    pub chosen: Vec<usize>,
    pub cluster_of: Vec<usize>,
    pub n_clusters: usize,
}

impl Strata {
    pub fn build(data: &ChoiceData) -> Result<Self, FitError> {
        let bad = |m: String| Err(FitError::InvalidData(m));
        let p = data.names.len();
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        let mut rows: Vec<Vec<usize>> = Vec::new();
        let mut clusters: BTreeMap<&str, usize> = BTreeMap::new();
        let mut stratum_cluster: Vec<&str> = Vec::new();
        for (i, obs) in data.observations.iter().enumerate() {
            if obs.covariates.len() != p {
                return bad(format!("observation {i} has {} covariates, expected {p}", obs.covariates.len()));
            }
            if obs.covariates.iter().any(|v| !v.is_finite()) {
                return bad(format!("observation {i} has a non-finite covariate"));
            }
            let s = *index.entry(obs.stratum.as_str()).or_insert_with(|| {
                rows.push(Vec::new());
                stratum_cluster.push(obs.cluster.as_str());
                rows.len() - 1
            });
            if stratum_cluster[s] != obs.cluster {
                return bad(format!("stratum {:?} spans several clusters", obs.stratum));
            }
            rows[s].push(i);
        }
        if rows.is_empty() {
            return bad("no observations".into());
        }
        let mut chosen = Vec::with_capacity(rows.len());
        for (s, r) in rows.iter().enumerate() {
            if r.len() < 2 {
                return bad(format!("stratum {:?} has fewer than 2 alternatives", data.observations[r[0]].stratum));
            }
            let picks: Vec<usize> = r.iter().copied().filter(|&i| data.observations[i].chosen).collect();
            if picks.len() != 1 {
                return bad(format!(
                    "stratum {:?} has {} chosen alternatives, expected exactly 1",
                    data.observations[rows[s][0]].stratum,
                    picks.len()
                ));
            }
            chosen.push(picks[0]);
        }
        let mut cluster_of = Vec::with_capacity(rows.len());
        for c in &stratum_cluster {
            let n = clusters.len();
            cluster_of.push(*clusters.entry(c).or_insert(n));
        }
        Ok(Self { rows, chosen, cluster_of, n_clusters: clusters.len() })
    }
}

/// Log-likelihood, gradient, Hessian and per-stratum scores at `beta`.
#[derive(Debug, Clone)]
pub struct LikelihoodEval {
    pub ll: f64,
    pub grad: Vec<f64>,
    /// Hessian of the log-likelihood (negative semidefinite), row-major.
    pub hessian: Vec<Vec<f64>>,
    pub scores: Vec<Vec<f64>>,
}

fn stratum_terms(x: &[&[f64]], chosen: usize, beta: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let p = beta.len();
    let eta: Vec<f64> = x.iter().map(|row| row.iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - m).exp()).collect();
    let z: f64 = w.iter().sum();
    let probs: Vec<f64> = w.iter().map(|v| v / z).collect();
    let ll = eta[chosen] - m - z.ln();
    let mut mean = vec![0.0; p];
    for (row, pr) in x.iter().zip(&probs) {
        for k in 0..p {
            mean[k] += pr * row[k];
        }
    }
    let score: Vec<f64> = (0..p).map(|k| x[chosen][k] - mean[k]).collect();
    // negative Hessian: sum_j p_j (x_j - mean)(x_j - mean)^T, stored upper-triangular flat
    let mut info = vec![0.0; p * p];
    for (row, pr) in x.iter().zip(&probs) {
        for a in 0..p {
            let da = row[a] - mean[a];
            if da == 0.0 {
                continue;
            }
            for b in a..p {
                info[a * p + b] += pr * da * (row[b] - mean[b]);
            }
        }
    }
    (ll, score, info)
}

/// Evaluates the conditional-logit likelihood. Per-stratum terms may run in
/// parallel; they are reduced in stratum order.
pub fn clogit_eval(data: &ChoiceData, beta: &[f64], exec: Exec) -> Result<LikelihoodEval, FitError> {
    let strata = Strata::build(data)?;
    Ok(eval_strata(data, &strata, beta, exec))
}

fn eval_strata(data: &ChoiceData, strata: &Strata, beta: &[f64], exec: Exec) -> LikelihoodEval {
    let p = beta.len();
    let terms = exec.map_range(strata.rows.len(), |s| {
        let rows = &strata.rows[s];
        let x: Vec<&[f64]> = rows.iter().map(|&i| data.observations[i].covariates.as_slice()).collect();
        let chosen = rows.iter().position(|&i| i == strata.chosen[s]).expect("chosen row in stratum");
        stratum_terms(&x, chosen, beta)
    });
    let mut ll = 0.0;
    let mut grad = vec![0.0; p];
    let mut info = vec![0.0; p * p];
    let mut scores = Vec::with_capacity(terms.len());
    for (l, s, h) in terms {
        ll += l;
        for k in 0..p {
            grad[k] += s[k];
        }
        for (a, b) in info.iter_mut().zip(&h) {
            *a += b;
        }
        scores.push(s);
    }
    let mut hessian = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in a..p {
            hessian[a][b] = -info[a * p + b];
            hessian[b][a] = -info[a * p + b];
        }
    }
    LikelihoodEval { ll, grad, hessian, scores }
}

pub(crate) fn to_dmatrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let n = m.len();
    let c = m.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, c, |i, j| m[i][j])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Solves `info * x = rhs` for a positive (semi)definite `info`, adding a
/// small ridge when the Cholesky factorisation fails.
pub(crate) fn solve_spd(info: &DMatrix<f64>, rhs: &DVector<f64>, ridge: f64) -> Option<(DVector<f64>, bool)> {
    if let Some(ch) = info.clone().cholesky() {
        return Some((ch.solve(rhs), false));
    }
    let n = info.nrows();
    let scale = (0..n).map(|i| info[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let ridged = info + DMatrix::identity(n, n) * (ridge * scale);
    ridged.cholesky().map(|ch| (ch.solve(rhs), true))
}

pub(crate) fn invert_spd(info: &DMatrix<f64>, ridge: f64) -> Option<(DMatrix<f64>, bool)> {
    let n = info.nrows();
    solve_spd_matrix(info, &DMatrix::identity(n, n), ridge)
}

fn solve_spd_matrix(info: &DMatrix<f64>, rhs: &DMatrix<f64>, ridge: f64) -> Option<(DMatrix<f64>, bool)> {
    if let Some(ch) = info.clone().cholesky() {
        return Some((ch.solve(rhs), false));
    }
    let n = info.nrows();
    let scale = (0..n).map(|i| info[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let ridged = info + DMatrix::identity(n, n) * (ridge * scale);
    ridged.cholesky().map(|ch| (ch.solve(rhs), true))
}

/// Columns that never vary within any stratum carry no information.
fn constant_within_strata(data: &ChoiceData, strata: &Strata) -> Vec<usize> {
    (0..data.names.len())
        .filter(|&k| {
            strata.rows.iter().all(|rows| {
                let first = data.observations[rows[0]].covariates[k];
                rows.iter().all(|&i| data.observations[i].covariates[k] == first)
            })
        })
        .collect()
}

fn drop_columns(data: &ChoiceData, drop: &[usize]) -> ChoiceData {
    let keep: Vec<usize> = (0..data.names.len()).filter(|k| !drop.contains(k)).collect();
    ChoiceData {
        names: keep.iter().map(|&k| data.names[k].clone()).collect(),
        observations: data
            .observations
            .iter()
            .map(|o| ChoiceObservation { covariates: keep.iter().map(|&k| o.covariates[k]).collect(), ..o.clone() })
            .collect(),
    }
}

/// Rank check on the within-stratum centred design.
fn check_rank(data: &ChoiceData, strata: &Strata) -> Result<(), FitError> {
    let p = data.names.len();
    if p == 0 {
        return Ok(());
    }
    let mut gram = DMatrix::<f64>::zeros(p, p);
    for rows in &strata.rows {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for &i in rows {
            for k in 0..p {
                mean[k] += data.observations[i].covariates[k] / n;
            }
        }
        for &i in rows {
            let d: Vec<f64> = (0..p).map(|k| data.observations[i].covariates[k] - mean[k]).collect();
            for a in 0..p {
                for b in 0..p {
                    gram[(a, b)] += d[a] * d[b];
                }
            }
        }
    }
    let eig = gram.symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || min <= max * 1e-12 {
        return Err(FitError::RankDeficient(format!(
            "within-stratum design of [{}] is singular (eigenvalue ratio {:.3e})",
            data.names.join(", "),
            if max > 0.0 { min / max } else { 0.0 }
        )));
    }
    Ok(())
}

/// Result of the Newton iterations on a concave likelihood.
pub(crate) struct NewtonOutcome {
    pub beta: Vec<f64>,
    pub eval: LikelihoodEval,
    pub convergence: Convergence,
}

/// Newton-Raphson with step halving on a concave log-likelihood.
///
/// Converges when the relative log-likelihood change falls below
/// `rel_ll_tol`, or the gradient's inf-norm falls below `grad_tol`, in both
/// cases with the Newton step itself small. Diverging coordinates (|beta| past
/// `separation_bound` with the likelihood still improving) are reported as
/// separation.
pub(crate) fn newton<F>(names: &[String], start: Vec<f64>, opts: &FitOptions, eval: F) -> Result<NewtonOutcome, FitError>
where
    F: Fn(&[f64]) -> LikelihoodEval,
{
    let p = start.len();
    let mut beta = start;
    let mut cur = eval(&beta);
    let mut conv = Convergence { ll_trace: vec![cur.ll], ..Default::default() };
    if p == 0 {
        conv.converged = true;
        return Ok(NewtonOutcome { beta, eval: cur, convergence: conv });
    }
    for iter in 1..=opts.max_iter {
        let info = -to_dmatrix(&cur.hessian);
        let g = DVector::from_column_slice(&cur.grad);
        let (step, ridged) = solve_spd(&info, &g, opts.ridge)
            .ok_or_else(|| FitError::RankDeficient("information matrix is singular".into()))?;
        conv.ridge_applied |= ridged;
        let step_inf = step.amax();
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let e = eval(&cand);
            if e.ll.is_finite() && e.ll >= cur.ll {
                next = Some((cand, e));
                break;
            }
            t *= 0.5;
        }
        conv.iterations = iter;
        let Some((cand, e)) = next else {
            // no ascent direction left within floating-point resolution
            conv.converged = true;
            conv.note = "step halving exhausted at a stationary point".into();
            break;
        };
        debug_assert!(e.ll >= cur.ll, "Newton iterate decreased the log-likelihood");
        let improved = e.ll > cur.ll;
        let rel = (e.ll - cur.ll).abs() / (cur.ll.abs() + 1e-300);
        let grad_inf = e.grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        beta = cand;
        cur = e;
        conv.ll_trace.push(cur.ll);
        let beta_inf = beta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if beta_inf > opts.separation_bound && improved {
            let culprits = names
                .iter()
                .zip(&beta)
                .filter(|(_, b)| b.abs() > opts.separation_bound)
                .map(|(n, _)| n.clone())
                .collect();
            return Err(FitError::Separation(culprits));
        }
        let small_step = t * step_inf < 1e-4;
        if (rel < opts.rel_ll_tol && small_step) || (grad_inf < opts.grad_tol && t * step_inf < 1e-6) {
            conv.converged = true;
            break;
        }
    }
    if !conv.converged {
        return Err(FitError::NonConvergence(opts.max_iter));
    }
    Ok(NewtonOutcome { beta, eval: cur, convergence: conv })
}

/// Sandwich covariance `H^-1 (sum_g s_g s_g^T) H^-1` from per-stratum scores.
pub(crate) fn sandwich(info_inv: &DMatrix<f64>, scores: &[Vec<f64>], cluster_of: &[usize], n_clusters: usize) -> DMatrix<f64> {
    let p = info_inv.nrows();
    let mut sums = vec![vec![0.0; p]; n_clusters];
    for (s, c) in scores.iter().zip(cluster_of) {
        for k in 0..p {
            sums[*c][k] += s[k];
        }
    }
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for s in &sums {
        let v = DVector::from_column_slice(s);
        meat += &v * v.transpose();
    }
    info_inv * meat * info_inv
}

pub(crate) fn coefficient_table(names: &[String], beta: &[f64], cov: &DMatrix<f64>, odds: bool) -> Vec<Coefficient> {
    let mut rows: Vec<Coefficient> = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let se = cov[(k, k)].max(0.0).sqrt();
            let z = beta[k] / se;
            let (lo, hi) = (beta[k] - Z95 * se, beta[k] + Z95 * se);
            Coefficient {
                name: name.clone(),
                estimate: beta[k],
                se,
                z,
                p: two_sided_p(z),
                p_fdr: f64::NAN,
                ci_low: lo,
                ci_high: hi,
                odds_ratio: odds.then(|| beta[k].exp()),
                or_ci_low: odds.then(|| lo.exp()),
                or_ci_high: odds.then(|| hi.exp()),
            }
        })
        .collect();
    let ps: Vec<f64> = rows.iter().map(|c| if c.p.is_nan() { 1.0 } else { c.p }).collect();
    if let Ok(adj) = fdr_adjust(&ps) {
        for (c, a) in rows.iter_mut().zip(adj) {
            c.p_fdr = a;
        }
    }
    rows
}

/// `[1 - exp((2/n)(ll0 - ll1))] / [1 - exp((2/n) ll0)]` with `n` strata.
pub fn nagelkerke_r2(ll0: f64, ll1: f64, n: usize) -> f64 {
    let n = n as f64;
    let cox_snell = 1.0 - ((2.0 / n) * (ll0 - ll1)).exp();
    let max = 1.0 - ((2.0 / n) * ll0).exp();
    if max <= 0.0 {
        return 0.0;
    }
    (cox_snell / max).clamp(0.0, 1.0)
}

/// Conditional logit stratified on the choice set.
pub fn fit_conditional_logit(data: &ChoiceData, opts: &FitOptions) -> Result<FitResult, FitError> {
    let strata = Strata::build(data)?;
    let dropped = constant_within_strata(data, &strata);
    let reduced = drop_columns(data, &dropped);
    check_rank(&reduced, &strata)?;
    let names = reduced.names.clone();
    let p = names.len();
    let out = newton(&names, vec![0.0; p], opts, |b| eval_strata(&reduced, &strata, b, opts.exec))?;
    let mut conv = out.convergence;
    conv.dropped_columns = dropped.iter().map(|&k| data.names[k].clone()).collect();
    if conv.note.is_empty() {
        conv.note = "one chosen alternative per stratum: no tied events".into();
    }
    let info = -to_dmatrix(&out.eval.hessian);
    let (info_inv, ridged) = if p > 0 {
        invert_spd(&info, opts.ridge).ok_or_else(|| FitError::RankDeficient("information matrix is singular".into()))?
    } else {
        (DMatrix::zeros(0, 0), false)
    };
    conv.ridge_applied |= ridged;
    let robust = sandwich(&info_inv, &out.eval.scores, &strata.cluster_of, strata.n_clusters);
    let ll0: f64 = strata.rows.iter().map(|r| -(r.len() as f64).ln()).sum();
    let n = strata.rows.len();
    Ok(FitResult {
        model: "conditional_logit".into(),
        coefficients: coefficient_table(&names, &out.beta, &robust, true),
        covariance: from_dmatrix(&robust),
        model_covariance: from_dmatrix(&info_inv),
        log_likelihood: out.eval.ll,
        null_log_likelihood: ll0,
        n_strata: n,
        n_observations: data.observations.len(),
        n_clusters: strata.n_clusters,
        nagelkerke_r2: nagelkerke_r2(ll0, out.eval.ll, n),
        convergence: conv,
    })
}

/// OLS with cluster-robust covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<Coefficient>,
    pub covariance: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub n: usize,
    pub n_clusters: usize,
}

/// `beta = (X'X)^-1 X'y`; covariance `(X'X)^-1 (sum_g X_g' e_g e_g' X_g) (X'X)^-1`.
pub fn fit_ols_clustered<S: AsRef<str>>(
    y: &[f64],
    x: &[Vec<f64>],
    clusters: &[S],
    names: &[String],
) -> Result<OlsFit, FitError> {
    let n = y.len();
    let p = names.len();
    if x.len() != n || clusters.len() != n {
        return Err(FitError::InvalidData("y, X and cluster ids must have equal length".into()));
    }
    if x.iter().any(|r| r.len() != p) {
        return Err(FitError::InvalidData(format!("every design row needs {p} columns")));
    }
    if n <= p {
        return Err(FitError::RankDeficient(format!("n = {n} must exceed p = {p}")));
    }
    let xm = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let yv = DVector::from_column_slice(y);
    let xtx = xm.transpose() * &xm;
    let eig = xtx.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 || min <= max * 1e-12 {
        return Err(FitError::RankDeficient("X'X is singular".into()));
    }
    let xtx_inv = xtx.try_inverse().ok_or_else(|| FitError::RankDeficient("X'X is singular".into()))?;
    let beta = &xtx_inv * xm.transpose() * &yv;
    let resid = &yv - &xm * &beta;
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    let cluster_of: Vec<usize> = clusters
        .iter()
        .map(|c| {
            let k = ids.len();
            *ids.entry(c.as_ref()).or_insert(k)
        })
        .collect();
    let scores: Vec<Vec<f64>> = (0..n).map(|i| (0..p).map(|j| x[i][j] * resid[i]).collect()).collect();
    let cov = sandwich(&xtx_inv, &scores, &cluster_of, ids.len());
    let b: Vec<f64> = beta.iter().copied().collect();
    Ok(OlsFit {
        coefficients: coefficient_table(names, &b, &cov, false),
        covariance: from_dmatrix(&cov),
        residuals: resid.iter().copied().collect(),
        n,
        n_clusters: ids.len(),
    })
}
