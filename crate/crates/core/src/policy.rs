//! Desk-scale stand-in for a personalised language model.
//!
//! [`ToyPolicy`] is an autoregressive softmax policy over a small integer
//! alphabet. At step `t` the context vector is pooled from the soft user
//! tokens, the prompt token embeddings and the already-generated response
//! tokens; logits are `W h_t`.
//!
//! Pooling divides the summed vectors by the number of *token* vectors
//! (prompt plus previous response tokens). Soft user tokens add to the sum
//! without changing the divisor, so an all-zero user embedding is an exact
//! no-op and the user-conditioned policy coincides with the unconditioned
//! one at a zero embedding.
//!
//! [`UserEmbeddingModel`] represents each user's soft prompt as a mixture
//! of a shared bank of `K` components: `e_i = sum_k w_i[k] V[k]`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::json;
use crate::model::GENERIC_USER;
use crate::seed;

/// Token id reserved as end-of-sequence.
pub const EOS: usize = 0;

const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfVocab { token: usize, vocab: usize },
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("user context has shape {got:?}, expected {expected:?}")]
    ContextShape { got: (usize, usize), expected: (usize, usize) },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self { rows: rows.len(), cols, data }
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, half_width: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-half_width, half_width).expect("finite range");
        Self { rows, cols, data: (0..rows * cols).map(|_| dist.sample(rng)).collect() }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub vocab: usize,
    pub dim: usize,
    /// Token embeddings, `vocab x dim`.
    pub embed: Matrix,
    /// Output weights, `vocab x dim`.
    pub out: Matrix,
}

/// Gradient with the same layout as [`ToyPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub embed: Matrix,
    pub out: Matrix,
}

impl PolicyGrad {
    pub fn zeros(vocab: usize, dim: usize) -> Self {
        Self { embed: Matrix::zeros(vocab, dim), out: Matrix::zeros(vocab, dim) }
    }

    pub fn add_scaled(&mut self, other: &PolicyGrad, scale: f64) {
        self.embed.add_scaled(&other.embed, scale);
        self.out.add_scaled(&other.out, scale);
    }

    pub fn flat(&self) -> Vec<f64> {
        self.embed.data.iter().chain(&self.out.data).copied().collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.embed.data.iter_mut().chain(self.out.data.iter_mut()).for_each(|v| *v *= s);
    }
}

/// Gradient of `log pi(y | x, e)` with respect to the policy and the context.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbGrad {
    pub log_prob: f64,
    pub policy: PolicyGrad,
    /// Gradient with respect to the soft user tokens, when a context was given.
    pub context: Option<Matrix>,
}

impl ToyPolicy {
    pub fn new(vocab: usize, dim: usize) -> Result<Self, PolicyError> {
        if vocab < 2 || dim < 1 {
            return Err(PolicyError::InvalidShape(format!("vocab {vocab} (>=2), dim {dim} (>=1)")));
        }
        Ok(Self { vocab, dim, embed: Matrix::zeros(vocab, dim), out: Matrix::zeros(vocab, dim) })
    }

    /// Parameters i.i.d. uniform on [-0.1, 0.1] from a seeded generator.
    pub fn init(vocab: usize, dim: usize, seed: u64) -> Result<Self, PolicyError> {
        let mut p = Self::new(vocab, dim)?;
        let mut rng = seed::stream(seed, &["policy-init"]);
        p.embed = Matrix::uniform(vocab, dim, INIT_RANGE, &mut rng);
        p.out = Matrix::uniform(vocab, dim, INIT_RANGE, &mut rng);
        Ok(p)
    }

    pub fn n_params(&self) -> usize {
        2 * self.vocab * self.dim
    }

    pub fn flat(&self) -> Vec<f64> {
        self.embed.data.iter().chain(&self.out.data).copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let n = self.vocab * self.dim;
        self.embed.data.copy_from_slice(&flat[..n]);
        self.out.data.copy_from_slice(&flat[n..2 * n]);
    }

    pub fn apply_grad(&mut self, grad: &PolicyGrad, step: f64) {
        self.embed.add_scaled(&grad.embed, step);
        self.out.add_scaled(&grad.out, step);
    }

    pub fn is_finite(&self) -> bool {
        self.embed.is_finite() && self.out.is_finite()
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), PolicyError> {
        match tokens.iter().find(|&&t| t >= self.vocab) {
            Some(&token) => Err(PolicyError::TokenOutOfVocab { token, vocab: self.vocab }),
            None => Ok(()),
        }
    }

    fn check_context(&self, context: Option<&Matrix>) -> Result<(), PolicyError> {
        if let Some(e) = context {
            if e.cols != self.dim {
                return Err(PolicyError::ContextShape { got: e.shape(), expected: (e.rows, self.dim) });
            }
        }
        Ok(())
    }

    /// Sum of the fixed (context + prompt) vectors and the prompt token count.
    fn base_context(&self, prompt: &[usize], context: Option<&Matrix>) -> (Vec<f64>, usize) {
        let mut sum = vec![0.0; self.dim];
        if let Some(e) = context {
            for r in 0..e.rows {
                for (s, v) in sum.iter_mut().zip(e.row(r)) {
                    *s += v;
                }
            }
        }
        for &tok in prompt {
            for (s, v) in sum.iter_mut().zip(self.embed.row(tok)) {
                *s += v;
            }
        }
        (sum, prompt.len())
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        (0..self.vocab).map(|v| dot(self.out.row(v), h)).collect()
    }

    /// Next-token log-probabilities given the response prefix.
    pub fn next_token_log_probs(
        &self,
        prompt: &[usize],
        prefix: &[usize],
        context: Option<&Matrix>,
    ) -> Result<Vec<f64>, PolicyError> {
        self.check_tokens(prompt)?;
        self.check_tokens(prefix)?;
        self.check_context(context)?;
        let (mut sum, mut count) = self.base_context(prompt, context);
        for &tok in prefix {
            for (s, v) in sum.iter_mut().zip(self.embed.row(tok)) {
                *s += v;
            }
            count += 1;
        }
        let h = pooled(&sum, count);
        Ok(log_softmax(&self.logits(&h)))
    }

    /// `log pi(y | x, e)`; always finite and non-positive.
    pub fn log_prob(&self, prompt: &[usize], response: &[usize], context: Option<&Matrix>) -> Result<f64, PolicyError> {
        self.check_tokens(prompt)?;
        self.check_tokens(response)?;
        self.check_context(context)?;
        let (mut sum, mut count) = self.base_context(prompt, context);
        let mut total = 0.0;
        for &tok in response {
            let h = pooled(&sum, count);
            let lp = log_softmax(&self.logits(&h));
            total += lp[tok];
            for (s, v) in sum.iter_mut().zip(self.embed.row(tok)) {
                *s += v;
            }
            count += 1;
        }
        Ok(total)
    }

    /// `log pi(y | x, e)` and its gradient with respect to `E`, `W` and `e`.
    pub fn log_prob_grad(
        &self,
        prompt: &[usize],
        response: &[usize],
        context: Option<&Matrix>,
    ) -> Result<LogProbGrad, PolicyError> {
        self.check_tokens(prompt)?;
        self.check_tokens(response)?;
        self.check_context(context)?;
        let d = self.dim;
        let (mut sum, mut count) = self.base_context(prompt, context);
        let mut grad = PolicyGrad::zeros(self.vocab, d);
        // d logp / d(sum of context rows); every soft-token row receives it
        let mut d_ctx_row = vec![0.0; d];
        // accumulated d logp / d(pooled sum) for each response position's own embedding
        let mut d_sum_after = vec![vec![0.0; d]; response.len()];
        let mut d_prompt = vec![0.0; d];
        let mut total = 0.0;

        for (t, &tok) in response.iter().enumerate() {
            let scale = 1.0 / count.max(1) as f64;
            let h: Vec<f64> = sum.iter().map(|s| s * scale).collect();
            let lp = log_softmax(&self.logits(&h));
            total += lp[tok];
            // d logp_t / d z = onehot(tok) - p
            let mut dh = vec![0.0; d];
            for v in 0..self.vocab {
                let g = if v == tok { 1.0 } else { 0.0 } - lp[v].exp();
                if g == 0.0 {
                    continue;
                }
                for (j, dh_j) in dh.iter_mut().enumerate() {
                    grad.out.data[v * d + j] += g * h[j];
                    *dh_j += g * self.out.data[v * d + j];
                }
            }
            let dsum: Vec<f64> = dh.iter().map(|x| x * scale).collect();
            for j in 0..d {
                d_ctx_row[j] += dsum[j];
                d_prompt[j] += dsum[j];
            }
            // previous response tokens 0..t are part of this step's sum
            for prev in d_sum_after.iter_mut().take(t) {
                for j in 0..d {
                    prev[j] += dsum[j];
                }
            }
            for (s, v) in sum.iter_mut().zip(self.embed.row(tok)) {
                *s += v;
            }
            count += 1;
        }

        for &tok in prompt {
            for j in 0..d {
                grad.embed.data[tok * d + j] += d_prompt[j];
            }
        }
        for (t, &tok) in response.iter().enumerate() {
            for j in 0..d {
                grad.embed.data[tok * d + j] += d_sum_after[t][j];
            }
        }
        let context_grad = context.map(|e| {
            let mut g = Matrix::zeros(e.rows, d);
            for r in 0..e.rows {
                g.row_mut(r).copy_from_slice(&d_ctx_row);
            }
            g
        });
        Ok(LogProbGrad { log_prob: total, policy: grad, context: context_grad })
    }

    /// Samples a response autoregressively.
    ///
    /// `temperature == 0` takes the argmax at each step (lowest id on ties).
    /// Generation stops after emitting [`EOS`] (which is included) or at
    /// `max_len` tokens.
    pub fn sample(
        &self,
        prompt: &[usize],
        context: Option<&Matrix>,
        max_len: usize,
        temperature: f64,
        rng_seed: u64,
    ) -> Result<Vec<usize>, PolicyError> {
        let mut rng = seed::stream(rng_seed, &["sample"]);
        let mut out = Vec::new();
        while out.len() < max_len.max(1) {
            let lp = self.next_token_log_probs(prompt, &out, context)?;
            let tok = if temperature <= 0.0 {
                argmax(&lp)
            } else {
                let scaled: Vec<f64> = lp.iter().map(|x| x / temperature).collect();
                let probs: Vec<f64> = log_softmax(&scaled).iter().map(|x| x.exp()).collect();
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            };
            out.push(tok);
            if tok == EOS {
                break;
            }
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pooled(sum: &[f64], count: usize) -> Vec<f64> {
    let scale = 1.0 / count.max(1) as f64;
    sum.iter().map(|s| s * scale).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Whose embedding to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserRef<'a> {
    Known(&'a str),
    Generic,
}

impl<'a> UserRef<'a> {
    pub fn parse(id: &'a str) -> Self {
        if id == GENERIC_USER {
            UserRef::Generic
        } else {
            UserRef::Known(id)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEmbeddingModel {
    pub k: usize,
    pub user_tokens: usize,
    pub dim: usize,
    /// `K` components, each `user_tokens x dim`.
    pub bank: Vec<Matrix>,
    pub users: BTreeMap<String, Vec<f64>>,
    pub generic: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserModelGrad {
    pub bank: Vec<Matrix>,
    pub users: BTreeMap<String, Vec<f64>>,
    pub generic: Vec<f64>,
}

impl UserModelGrad {
    pub fn zeros_like(m: &UserEmbeddingModel) -> Self {
        Self {
            bank: m.bank.iter().map(|v| Matrix::zeros(v.rows, v.cols)).collect(),
            users: m.users.keys().map(|k| (k.clone(), vec![0.0; m.k])).collect(),
            generic: vec![0.0; m.k],
        }
    }

    pub fn add_scaled(&mut self, other: &UserModelGrad, scale: f64) {
        for (a, b) in self.bank.iter_mut().zip(&other.bank) {
            a.add_scaled(b, scale);
        }
        for (id, w) in &other.users {
            if let Some(mine) = self.users.get_mut(id) {
                for (a, b) in mine.iter_mut().zip(w) {
                    *a += scale * b;
                }
            }
        }
        for (a, b) in self.generic.iter_mut().zip(&other.generic) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in &mut self.bank {
            m.data.iter_mut().for_each(|v| *v *= s);
        }
        self.users.values_mut().flatten().for_each(|v| *v *= s);
        self.generic.iter_mut().for_each(|v| *v *= s);
    }

    /// Same ordering as [`UserEmbeddingModel::flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.bank.iter().flat_map(|m| m.data.iter().copied()).collect();
        for w in self.users.values() {
            out.extend_from_slice(w);
        }
        out.extend_from_slice(&self.generic);
        out
    }
}

impl UserEmbeddingModel {
    /// Bank and per-user weights uniform on [-0.1, 0.1]; generic weights `1/K`.
    pub fn init<S: AsRef<str>>(
        k: usize,
        user_tokens: usize,
        dim: usize,
        user_ids: &[S],
        seed: u64,
    ) -> Result<Self, PolicyError> {
        if k == 0 || user_tokens == 0 || dim == 0 {
            return Err(PolicyError::InvalidShape(format!("K={k}, T_u={user_tokens}, d={dim} must be >= 1")));
        }
        let mut rng = seed::stream(seed, &["user-model-init"]);
        let bank = (0..k).map(|_| Matrix::uniform(user_tokens, dim, INIT_RANGE, &mut rng)).collect();
        let dist = Uniform::new_inclusive(-INIT_RANGE, INIT_RANGE).expect("finite range");
        let mut users = BTreeMap::new();
        for id in user_ids {
            let id = id.as_ref();
            if id == GENERIC_USER {
                continue;
            }
            users.insert(id.to_string(), (0..k).map(|_| dist.sample(&mut rng)).collect());
        }
        Ok(Self { k, user_tokens, dim, bank, users, generic: vec![1.0 / k as f64; k] })
    }

    pub fn weights(&self, user: UserRef<'_>) -> Result<&[f64], PolicyError> {
        match user {
            UserRef::Generic => Ok(&self.generic),
            UserRef::Known(id) => {
                self.users.get(id).map(Vec::as_slice).ok_or_else(|| PolicyError::UnknownUser(id.to_string()))
            }
        }
    }

    /// `sum_k w[k] V[k]` for an arbitrary weight vector.
    pub fn combine(&self, w: &[f64]) -> Matrix {
        let mut e = Matrix::zeros(self.user_tokens, self.dim);
        for (wk, vk) in w.iter().zip(&self.bank) {
            e.add_scaled(vk, *wk);
        }
        e
    }

    pub fn user_embedding(&self, user: UserRef<'_>) -> Result<Matrix, PolicyError> {
        Ok(self.combine(self.weights(user)?))
    }

    /// Chains a gradient with respect to `e_u` back to `V` and `w_u`.
    pub fn backprop(&self, user: UserRef<'_>, d_embedding: &Matrix, into: &mut UserModelGrad) -> Result<(), PolicyError> {
        let w = self.weights(user)?.to_vec();
        for (k, vk) in self.bank.iter().enumerate() {
            into.bank[k].add_scaled(d_embedding, w[k]);
            let dw = dot(&vk.data, &d_embedding.data);
            match user {
                UserRef::Generic => into.generic[k] += dw,
                UserRef::Known(id) => into.users.get_mut(id).expect("weights() checked the user")[k] += dw,
            }
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.bank.iter().flat_map(|m| m.data.iter().copied()).collect();
        for w in self.users.values() {
            out.extend_from_slice(w);
        }
        out.extend_from_slice(&self.generic);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut i = 0;
        for m in &mut self.bank {
            let n = m.data.len();
            m.data.copy_from_slice(&flat[i..i + n]);
            i += n;
        }
        for w in self.users.values_mut() {
            let n = w.len();
            w.copy_from_slice(&flat[i..i + n]);
            i += n;
        }
        let n = self.generic.len();
        self.generic.copy_from_slice(&flat[i..i + n]);
    }

    pub fn apply_grad(&mut self, grad: &UserModelGrad, step: f64) {
        for (a, b) in self.bank.iter_mut().zip(&grad.bank) {
            a.add_scaled(b, step);
        }
        for (id, g) in &grad.users {
            if let Some(w) = self.users.get_mut(id) {
                for (a, b) in w.iter_mut().zip(g) {
                    *a += step * b;
                }
            }
        }
        for (a, b) in self.generic.iter_mut().zip(&grad.generic) {
            *a += step * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bank.iter().all(Matrix::is_finite)
            && self.users.values().flatten().all(|v| v.is_finite())
            && self.generic.iter().all(|v| v.is_finite())
    }
}

/// A policy together with its user model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizedPolicy {
    pub policy: ToyPolicy,
    pub users: UserEmbeddingModel,
}

/// Checkpoint document: shapes plus row-major parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub policy: ToyPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<UserEmbeddingModel>,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "prefsim-toy-policy/1";

    pub fn new(policy: ToyPolicy, users: Option<UserEmbeddingModel>) -> Self {
        Self { format: Self::FORMAT.to_string(), policy, users }
    }

    pub fn to_json(&self) -> Result<String, PolicyError> {
        Ok(json::to_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.check_shapes()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check_shapes(&self) -> Result<(), PolicyError> {
        let p = &self.policy;
        let bad = |m: String| Err(PolicyError::InvalidShape(m));
        for (name, m) in [("embed", &p.embed), ("out", &p.out)] {
            if m.shape() != (p.vocab, p.dim) || m.data.len() != p.vocab * p.dim {
                return bad(format!("{name} does not match vocab x dim"));
            }
        }
        if let Some(u) = &self.users {
            if u.dim != p.dim || u.bank.len() != u.k {
                return bad("user model shape does not match policy".into());
            }
            if u.bank.iter().any(|m| m.shape() != (u.user_tokens, u.dim) || m.data.len() != u.user_tokens * u.dim) {
                return bad("bank component shape mismatch".into());
            }
            if u.generic.len() != u.k || u.users.values().any(|w| w.len() != u.k) {
                return bad("weight vector length must equal K".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(x: f64) -> f64 {
        x.ln()
    }

    #[test]
    fn uniform_policy_log_prob() {
        let p = ToyPolicy::new(4, 3).unwrap();
        let lp = p.log_prob(&[1, 2], &[3, 1], None).unwrap();
        assert!((lp - 2.0 * ln(0.25)).abs() < 1e-12);
        assert!((lp + 2.772_588_722_239_781).abs() < 1e-12);
    }

    #[test]
    fn zero_context_is_a_no_op() {
        let p = ToyPolicy::new(4, 2).unwrap();
        let e = Matrix::zeros(3, 2);
        assert_eq!(p.log_prob(&[1], &[2, 3], None).unwrap(), p.log_prob(&[1], &[2, 3], Some(&e)).unwrap());
        // also holds for non-zero parameters with the token-count pooling
        let p = ToyPolicy::init(5, 3, 11).unwrap();
        let e = Matrix::zeros(2, 3);
        let a = p.log_prob(&[1, 4], &[2, 3], None).unwrap();
        let b = p.log_prob(&[1, 4], &[2, 3], Some(&e)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hand_softmax_single_token() {
        // |S| = 2, d = 1, prompt embedding 1, W = (1, 0) -> logits (1, 0)
        let mut p = ToyPolicy::new(2, 1).unwrap();
        p.embed.data = vec![0.0, 1.0];
        p.out.data = vec![1.0, 0.0];
        let lp = p.log_prob(&[1], &[0], None).unwrap();
        let expected = (1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((lp - expected).abs() < 1e-12);
        assert!((lp + 0.313_261_687_518_222_8).abs() < 1e-12);
    }

    #[test]
    fn unknown_token_rejected() {
        let p = ToyPolicy::new(3, 2).unwrap();
        assert!(matches!(p.log_prob(&[5], &[1], None), Err(PolicyError::TokenOutOfVocab { token: 5, .. })));
        assert!(ToyPolicy::new(1, 2).is_err());
    }

    #[test]
    fn next_token_distribution_normalises() {
        let p = ToyPolicy::init(6, 3, 5).unwrap();
        let e = Matrix::filled(2, 3, 0.3);
        for prefix in [vec![], vec![2], vec![2, 5, 1]] {
            let lp = p.next_token_log_probs(&[1, 3], &prefix, Some(&e)).unwrap();
            let total: f64 = lp.iter().map(|x| x.exp()).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn prompt_order_does_not_matter() {
        let p = ToyPolicy::init(6, 3, 9).unwrap();
        let a = p.log_prob(&[1, 2, 3, 5], &[4, 2], None).unwrap();
        let b = p.log_prob(&[5, 3, 1, 2], &[4, 2], None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn user_embedding_examples() {
        let mut m = UserEmbeddingModel::init(2, 2, 3, &["u1", "u2"], 1).unwrap();
        m.bank[0] = Matrix::filled(2, 3, 1.0);
        m.bank[1] = Matrix::filled(2, 3, 2.0);
        m.users.insert("u1".into(), vec![0.5, 0.5]);
        assert_eq!(m.user_embedding(UserRef::Known("u1")).unwrap(), Matrix::filled(2, 3, 1.5));
        m.users.insert("u2".into(), vec![0.0, 1.0]);
        assert_eq!(m.user_embedding(UserRef::Known("u2")).unwrap(), m.bank[1]);
        m.users.insert("u2".into(), vec![0.0, 0.0]);
        assert_eq!(m.user_embedding(UserRef::Known("u2")).unwrap(), Matrix::zeros(2, 3));
        assert_eq!(m.generic, vec![0.5, 0.5]);
        assert!(matches!(m.user_embedding(UserRef::Known("nobody")), Err(PolicyError::UnknownUser(_))));
        assert_eq!(m.user_embedding(UserRef::parse(GENERIC_USER)).unwrap(), Matrix::filled(2, 3, 1.5));
    }

    #[test]
    fn sampling_is_seeded_and_greedy_limit_works() {
        let p = ToyPolicy::new(5, 2).unwrap();
        let a = p.sample(&[1], None, 8, 1.0, 42).unwrap();
        let b = p.sample(&[1], None, 8, 1.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty() && a.len() <= 8);

        let p = ToyPolicy::init(5, 2, 3).unwrap();
        let greedy = p.sample(&[1, 2], None, 4, 0.0, 0).unwrap();
        let mut prefix = Vec::new();
        for &tok in &greedy {
            let lp = p.next_token_log_probs(&[1, 2], &prefix, None).unwrap();
            assert_eq!(tok, argmax(&lp));
            prefix.push(tok);
        }
    }

    #[test]
    fn end_token_stops_sampling() {
        let mut p = ToyPolicy::new(4, 1).unwrap();
        p.embed.data = vec![1.0; 4];
        p.out.data = vec![50.0, 0.0, 0.0, 0.0];
        let out = p.sample(&[2], None, 10, 1.0, 7).unwrap();
        assert_eq!(out, vec![EOS]);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let policy = ToyPolicy::init(7, 3, 99).unwrap();
        let users = UserEmbeddingModel::init(3, 2, 3, &["a", "b"], 5).unwrap();
        let ck = Checkpoint::new(policy, Some(users));
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back.policy.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   ck.policy.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(back, ck);
        assert_eq!(back.to_json().unwrap(), text);
    }
}
