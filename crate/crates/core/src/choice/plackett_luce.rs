//! Plackett-Luce worths for ranked items.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{from_dmatrix, invert_spd, newton, to_dmatrix, FitError, FitOptions, LikelihoodEval, Z95};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlackettLuceFit {
    pub items: Vec<String>,
    pub reference: String,
    /// Log-worths with the reference fixed at 0.
    pub beta: Vec<f64>,
    pub beta_se: Vec<f64>,
    pub worths: Vec<f64>,
    pub worth_se: Vec<f64>,
    pub worth_ci: Vec<[f64; 2]>,
    /// `win[i][j] = P(i ranked above j)`.
    pub win: Vec<Vec<f64>>,
    /// Model-based covariance of `beta` (reference row/column zero).
    pub covariance: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub n_rankings: usize,
    pub iterations: usize,
}

/// `P(i > j) = exp(b_i) / (exp(b_i) + exp(b_j))`, written so both orders sum to 1.
pub fn win_probability(bi: f64, bj: f64) -> f64 {
    1.0 / (1.0 + (bj - bi).exp())
}

/// Pairwise win matrix; the lower triangle is the exact complement of the upper.
pub fn win_matrix(beta: &[f64]) -> Vec<Vec<f64>> {
    let n = beta.len();
    let mut win = vec![vec![0.5; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let p = win_probability(beta[i], beta[j]);
            win[i][j] = p;
            win[j][i] = 1.0 - p;
        }
    }
    win
}

fn softmax_worths(beta: &[f64]) -> Vec<f64> {
    let m = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = beta.iter().map(|b| (b - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|v| v / z).collect()
}

/// Log-likelihood, gradient and Hessian over the full `beta` vector.
pub fn pl_eval(rankings: &[Vec<usize>], beta: &[f64]) -> LikelihoodEval {
    let n = beta.len();
    let mut ll = 0.0;
    let mut grad = vec![0.0; n];
    let mut hess = vec![vec![0.0; n]; n];
    for r in rankings {
        for stage in 0..r.len().saturating_sub(1) {
            let rest = &r[stage..];
            let m = rest.iter().map(|&i| beta[i]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = rest.iter().map(|&i| (beta[i] - m).exp()).sum();
            ll += beta[r[stage]] - m - z.ln();
            grad[r[stage]] += 1.0;
            let p: Vec<f64> = rest.iter().map(|&i| (beta[i] - m).exp() / z).collect();
            for (a, &i) in rest.iter().enumerate() {
                grad[i] -= p[a];
                hess[i][i] -= p[a];
                for (b, &j) in rest.iter().enumerate() {
                    hess[i][j] += p[a] * p[b];
                }
            }
        }
    }
    LikelihoodEval { ll, grad, hessian: hess, scores: Vec::new() }
}

/// Every item must be beaten by and beat someone, transitively: the
/// "ranked above" digraph has to be strongly connected or the MLE diverges.
fn check_identifiable(rankings: &[Vec<usize>], items: &[String]) -> Result<(), FitError> {
    let n = items.len();
    let mut adj = vec![vec![false; n]; n];
    for r in rankings {
        for a in 0..r.len() {
            for b in a + 1..r.len() {
                adj[r[a]][r[b]] = true;
            }
        }
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if forward { adj[i][j] } else { adj[j][i] };
                if edge && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let fwd = reach(true);
    let back = reach(false);
    if (0..n).all(|i| fwd[i] && back[i]) {
        return Ok(());
    }
    // name the items that are never beaten or never beat anything when there are some
    let extreme: Vec<String> = (0..n)
        .filter(|&i| !(0..n).any(|j| adj[j][i]) || !(0..n).any(|j| adj[i][j]))
        .map(|i| items[i].clone())
        .collect();
    if !extreme.is_empty() {
        return Err(FitError::Separation(extreme));
    }
    Err(FitError::Separation((0..n).filter(|&i| !(fwd[i] && back[i])).map(|i| items[i].clone()).collect()))
}

/// Fits log-worths by Newton's method with `beta[reference] = 0`.
///
/// Each ranking lists item indices best first; partial rankings over subsets
/// contribute their own stages.
pub fn fit_plackett_luce(
    rankings: &[Vec<usize>],
    items: &[String],
    reference: usize,
    opts: &FitOptions,
) -> Result<PlackettLuceFit, FitError> {
    let n = items.len();
    if n < 2 || reference >= n {
        return Err(FitError::InvalidData(format!("need >= 2 items and a valid reference (got {n}, {reference})")));
    }
    for (k, r) in rankings.iter().enumerate() {
        let mut seen = vec![false; n];
        for &i in r {
            if i >= n || seen[i] {
                return Err(FitError::InvalidData(format!("ranking {k} is not an ordering of distinct items")));
            }
            seen[i] = true;
        }
    }
    check_identifiable(rankings, items)?;
    let free: Vec<usize> = (0..n).filter(|&i| i != reference).collect();
    let embed = |b: &[f64]| {
        let mut full = vec![0.0; n];
        for (k, &i) in free.iter().enumerate() {
            full[i] = b[k];
        }
        full
    };
    let restrict = |e: LikelihoodEval| LikelihoodEval {
        ll: e.ll,
        grad: free.iter().map(|&i| e.grad[i]).collect(),
        hessian: free.iter().map(|&i| free.iter().map(|&j| e.hessian[i][j]).collect()).collect(),
        scores: Vec::new(),
    };
    let names: Vec<String> = free.iter().map(|&i| items[i].clone()).collect();
    let out = newton(&names, vec![0.0; free.len()], opts, |b| restrict(pl_eval(rankings, &embed(b))))?;
    let beta = embed(&out.beta);
    let info = -to_dmatrix(&out.eval.hessian);
    let (inv, _) = invert_spd(&info, opts.ridge).ok_or_else(|| FitError::RankDeficient("singular information".into()))?;
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            cov[(i, j)] = inv[(a, b)];
        }
    }
    let worths = softmax_worths(&beta);
    // d lambda / d beta = diag(lambda) - lambda lambda^T
    let jac = DMatrix::from_fn(n, n, |i, j| if i == j { worths[i] * (1.0 - worths[i]) } else { -worths[i] * worths[j] });
    let wcov = &jac * &cov * jac.transpose();
    let worth_se: Vec<f64> = (0..n).map(|i| wcov[(i, i)].max(0.0).sqrt()).collect();
    let worth_ci = worths.iter().zip(&worth_se).map(|(w, s)| [w - Z95 * s, w + Z95 * s]).collect();
    let win = win_matrix(&beta);
    Ok(PlackettLuceFit {
        items: items.to_vec(),
        reference: items[reference].clone(),
        beta_se: (0..n).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        beta,
        worths,
        worth_se,
        worth_ci,
        win,
        covariance: from_dmatrix(&cov),
        log_likelihood: out.eval.ll,
        n_rankings: rankings.len(),
        iterations: out.convergence.iterations,
    })
}
