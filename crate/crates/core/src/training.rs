//! DPO and personalised DPO objectives with analytic gradients, and a plain
//! gradient-descent trainer.
//!
//! For a pair `(x, y1 > y2)` and context `c` the margin is
//!
//! ```text
//! m(c) = [log pi(y1|x,c) - log ref(y1|x)] - [log pi(y2|x,c) - log ref(y2|x)]
//! ```
//!
//! DPO minimises `-log sigmoid(beta * m(none))`. The personalised objective
//! minimises `-[alpha log sigmoid(beta m(e_u)) + (1 - alpha) log sigmoid(beta m(e_0))]`
//! where `e_u` is the user's soft prompt and `e_0` the generic one. The
//! reference policy is always evaluated without a user context.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::model::GENERIC_USER;
use crate::policy::{PersonalizedPolicy, PolicyError, PolicyGrad, ToyPolicy, UserEmbeddingModel, UserModelGrad, UserRef};
use crate::seed;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("policy and reference differ in shape: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss {loss} at step {step} (learning rate {learning_rate})")]
    NonFiniteLoss { step: usize, loss: f64, learning_rate: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid preference pair: {0}")]
    InvalidPair(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// One training sample: prompt, preferred and rejected response, user id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: Vec<usize>,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    pub user: String,
}

impl PreferencePair {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.prompt.is_empty() || self.chosen.is_empty() || self.rejected.is_empty() {
            return Err(TrainingError::InvalidPair("token sequences must be non-empty".into()));
        }
        if self.chosen == self.rejected {
            return Err(TrainingError::InvalidPair("chosen and rejected responses are identical".into()));
        }
        if self.user.is_empty() {
            return Err(TrainingError::InvalidPair("user id is empty".into()));
        }
        Ok(())
    }

    pub fn swapped(&self) -> Self {
        Self { chosen: self.rejected.clone(), rejected: self.chosen.clone(), ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Dpo,
    Pdpo,
}

impl FromStr for Objective {
    type Err = TrainingError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "dpo" => Ok(Objective::Dpo),
            "pdpo" => Ok(Objective::Pdpo),
            _ => Err(TrainingError::InvalidConfig(format!("unknown objective {s:?} (dpo|pdpo)"))),
        }
    }
}

/// Hyperparameter names that only matter for real language-model training.
/// They are accepted in configuration files and ignored.
pub const INERT_KEYS: &[&str] = &[
    "lora_r",
    "lora_alpha",
    "lora_dropout",
    "bf16",
    "gradient_accumulation_steps",
    "per_device_train_batch_size",
    "max_length",
    "max_prompt_length",
    "optimizer",
    "weight_decay",
    "add_generic_user_embedding",
    "gradient_checkpointing",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub warmup_steps: usize,
    pub schedule: Schedule,
    /// Clip the gradient to this L2 norm. Off by default.
    pub max_grad_norm: Option<f64>,
    #[serde(flatten)]
    pub inert: BTreeMap<String, serde_json::Value>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            learning_rate: 5e-5,
            epochs: 1,
            batch_size: 8,
            seed: 0,
            warmup_steps: 0,
            schedule: Schedule::Constant,
            max_grad_norm: None,
            inert: BTreeMap::new(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0,1]", self.alpha));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta {} must be > 0", self.beta));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if let Some(key) = self.inert.keys().find(|k| !INERT_KEYS.contains(&k.as_str())) {
            return bad(format!("unrecognised configuration key {key:?}"));
        }
        Ok(())
    }

    /// Learning rate at a given step: linear warmup, then constant or cosine decay.
    pub fn learning_rate_at(&self, step: usize, total_steps: usize) -> f64 {
        let lr = self.learning_rate;
        if step < self.warmup_steps {
            return lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        match self.schedule {
            Schedule::Constant => lr,
            Schedule::Cosine => {
                let span = total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
                let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
                0.5 * lr * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// `log sigmoid(x)`, stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_shapes(policy: &ToyPolicy, reference: &ToyPolicy) -> Result<(), TrainingError> {
    if policy.vocab != reference.vocab || policy.dim != reference.dim {
        return Err(TrainingError::ShapeMismatch(format!(
            "policy {}x{}, reference {}x{}",
            policy.vocab, policy.dim, reference.vocab, reference.dim
        )));
    }
    Ok(())
}

/// Reference log-ratio term `log ref(y1|x) - log ref(y2|x)`.
fn reference_gap(reference: &ToyPolicy, pair: &PreferencePair) -> Result<f64, TrainingError> {
    Ok(reference.log_prob(&pair.prompt, &pair.chosen, None)? - reference.log_prob(&pair.prompt, &pair.rejected, None)?)
}

/// The DPO margin for one pair under an optional user context.
pub fn margin(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    pair: &PreferencePair,
    context: Option<&crate::policy::Matrix>,
) -> Result<f64, TrainingError> {
    let own = policy.log_prob(&pair.prompt, &pair.chosen, context)? - policy.log_prob(&pair.prompt, &pair.rejected, context)?;
    Ok(own - reference_gap(reference, pair)?)
}

/// Mean `-log sigmoid(beta m)` over the batch.
pub fn dpo_loss(batch: &[PreferencePair], policy: &ToyPolicy, reference: &ToyPolicy, beta: f64) -> Result<f64, TrainingError> {
    if batch.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    check_shapes(policy, reference)?;
    let mut total = 0.0;
    for pair in batch {
        total += -log_sigmoid(beta * margin(policy, reference, pair, None)?);
    }
    Ok(total / batch.len() as f64)
}

fn resolve<'a>(model: &'a UserEmbeddingModel, user: &'a str) -> Result<UserRef<'a>, TrainingError> {
    let r = UserRef::parse(user);
    if let UserRef::Known(id) = r {
        if !model.users.contains_key(id) {
            return Err(TrainingError::UnknownUser(id.to_string()));
        }
    }
    Ok(r)
}

/// Mean personalised loss over the batch.
pub fn pdpo_loss(
    batch: &[PreferencePair],
    model: &PersonalizedPolicy,
    reference: &ToyPolicy,
    alpha: f64,
    beta: f64,
) -> Result<f64, TrainingError> {
    if batch.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    check_shapes(&model.policy, reference)?;
    let generic = model.users.user_embedding(UserRef::Generic)?;
    let mut total = 0.0;
    for pair in batch {
        let user = model.users.user_embedding(resolve(&model.users, &pair.user)?)?;
        let mu = margin(&model.policy, reference, pair, Some(&user))?;
        let m0 = margin(&model.policy, reference, pair, Some(&generic))?;
        total += -(alpha * log_sigmoid(beta * mu) + (1.0 - alpha) * log_sigmoid(beta * m0));
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub policy: PolicyGrad,
    /// Present for the personalised objective.
    pub users: Option<UserModelGrad>,
}

/// Gradient of `weight * -log sigmoid(beta * m(c))` for one pair and context.
fn margin_term_grad(
    policy: &ToyPolicy,
    ref_gap: f64,
    pair: &PreferencePair,
    context: Option<&crate::policy::Matrix>,
    beta: f64,
    weight: f64,
) -> Result<(f64, PolicyGrad, Option<crate::policy::Matrix>), TrainingError> {
    let g1 = policy.log_prob_grad(&pair.prompt, &pair.chosen, context)?;
    let g2 = policy.log_prob_grad(&pair.prompt, &pair.rejected, context)?;
    let m = g1.log_prob - g2.log_prob - ref_gap;
    let loss = -weight * log_sigmoid(beta * m);
    // d/dm of -log sigmoid(beta m) = -beta sigmoid(-beta m)
    let coef = -weight * beta * sigmoid(-beta * m);
    let mut grad = PolicyGrad::zeros(policy.vocab, policy.dim);
    grad.add_scaled(&g1.policy, coef);
    grad.add_scaled(&g2.policy, -coef);
    let ctx = match (g1.context, g2.context) {
        (Some(mut c1), Some(c2)) => {
            for (a, b) in c1.data.iter_mut().zip(&c2.data) {
                *a = coef * (*a - b);
            }
            Some(c1)
        }
        _ => None,
    };
    Ok((loss, grad, ctx))
}

/// DPO loss and gradient with respect to the policy parameters.
///
/// Per-pair terms are evaluated through `exec` and summed in pair order.
pub fn dpo_loss_grad(
    batch: &[PreferencePair],
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    beta: f64,
    exec: Exec,
) -> Result<LossGrad, TrainingError> {
    if batch.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    check_shapes(policy, reference)?;
    let per_pair = exec.map(batch, |pair| -> Result<_, TrainingError> {
        let gap = reference_gap(reference, pair)?;
        let (loss, grad, _) = margin_term_grad(policy, gap, pair, None, beta, 1.0)?;
        Ok((loss, grad))
    });
    let n = batch.len() as f64;
    let mut out = LossGrad { loss: 0.0, policy: PolicyGrad::zeros(policy.vocab, policy.dim), users: None };
    for item in per_pair {
        let (loss, grad) = item?;
        out.loss += loss / n;
        out.policy.add_scaled(&grad, 1.0 / n);
    }
    Ok(out)
}

/// Personalised loss and gradient with respect to the policy and the user model.
pub fn pdpo_loss_grad(
    batch: &[PreferencePair],
    model: &PersonalizedPolicy,
    reference: &ToyPolicy,
    alpha: f64,
    beta: f64,
    exec: Exec,
) -> Result<LossGrad, TrainingError> {
    if batch.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    check_shapes(&model.policy, reference)?;
    let generic = model.users.user_embedding(UserRef::Generic)?;
    let per_pair = exec.map(batch, |pair| -> Result<_, TrainingError> {
        let user_ref = resolve(&model.users, &pair.user)?;
        let user = model.users.user_embedding(user_ref)?;
        let gap = reference_gap(reference, pair)?;
        let (lu, gu, cu) = margin_term_grad(&model.policy, gap, pair, Some(&user), beta, alpha)?;
        let (l0, g0, c0) = margin_term_grad(&model.policy, gap, pair, Some(&generic), beta, 1.0 - alpha)?;
        let mut pg = gu;
        pg.add_scaled(&g0, 1.0);
        let mut ug = UserModelGrad::zeros_like(&model.users);
        model.users.backprop(user_ref, &cu.expect("context given"), &mut ug)?;
        model.users.backprop(UserRef::Generic, &c0.expect("context given"), &mut ug)?;
        Ok((lu + l0, pg, ug))
    });
    let n = batch.len() as f64;
    let mut out = LossGrad {
        loss: 0.0,
        policy: PolicyGrad::zeros(model.policy.vocab, model.policy.dim),
        users: Some(UserModelGrad::zeros_like(&model.users)),
    };
    for item in per_pair {
        let (loss, pg, ug) = item?;
        out.loss += loss / n;
        out.policy.add_scaled(&pg, 1.0 / n);
        out.users.as_mut().expect("set above").add_scaled(&ug, 1.0 / n);
    }
    Ok(out)
}

/// Trained parameters plus the per-step loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub objective: Objective,
    pub policy: ToyPolicy,
    pub users: Option<UserEmbeddingModel>,
    pub reference: ToyPolicy,
    /// Full-dataset loss before training and after every update step.
    pub loss_trace: Vec<f64>,
}

impl TrainOutcome {
    /// The loss trace as `step,loss` CSV.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (step, loss) in self.loss_trace.iter().enumerate() {
            out.push_str(&format!("{step},{}\n", crate::json::format_f64(*loss)));
        }
        out
    }
}

/// Initial parameters for a run.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialModel {
    Dpo(ToyPolicy),
    Pdpo(PersonalizedPolicy),
}

/// Distinct known user ids appearing in a dataset.
pub fn dataset_users(dataset: &[PreferencePair]) -> Vec<String> {
    let set: BTreeSet<&str> = dataset.iter().map(|p| p.user.as_str()).filter(|u| *u != GENERIC_USER).collect();
    set.into_iter().map(str::to_string).collect()
}

fn full_loss(
    dataset: &[PreferencePair],
    model: &InitialModel,
    reference: &ToyPolicy,
    config: &TrainingConfig,
) -> Result<f64, TrainingError> {
    match model {
        InitialModel::Dpo(p) => dpo_loss(dataset, p, reference, config.beta),
        InitialModel::Pdpo(pp) => pdpo_loss(dataset, pp, reference, config.alpha, config.beta),
    }
}

/// Mini-batch gradient descent. The reference policy is a frozen copy of
/// the initial policy. Deterministic given the config seed.
pub fn train(
    dataset: &[PreferencePair],
    initial: InitialModel,
    config: &TrainingConfig,
    exec: Exec,
) -> Result<TrainOutcome, TrainingError> {
    if dataset.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    config.validate()?;
    for pair in dataset {
        pair.validate()?;
    }
    let reference = match &initial {
        InitialModel::Dpo(p) => p.clone(),
        InitialModel::Pdpo(pp) => pp.policy.clone(),
    };
    let mut model = initial;
    let initial_loss = full_loss(dataset, &model, &reference, config)?;
    if !initial_loss.is_finite() {
        return Err(TrainingError::NonFiniteLoss { step: 0, loss: initial_loss, learning_rate: config.learning_rate });
    }
    let mut trace = vec![initial_loss];
    let steps_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut rng = seed::stream(config.seed, &["train-shuffle", &epoch.to_string()]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<PreferencePair> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let lr = config.learning_rate_at(step, total_steps);
            let mut grad = match &model {
                InitialModel::Dpo(p) => dpo_loss_grad(&batch, p, &reference, config.beta, exec)?,
                InitialModel::Pdpo(pp) => pdpo_loss_grad(&batch, pp, &reference, config.alpha, config.beta, exec)?,
            };
            if let Some(max_norm) = config.max_grad_norm {
                clip(&mut grad, max_norm);
            }
            match &mut model {
                InitialModel::Dpo(p) => p.apply_grad(&grad.policy, -lr),
                InitialModel::Pdpo(pp) => {
                    pp.policy.apply_grad(&grad.policy, -lr);
                    pp.users.apply_grad(grad.users.as_ref().expect("pdpo gradient has user part"), -lr);
                }
            }
            step += 1;
            let loss = full_loss(dataset, &model, &reference, config)?;
            if !loss.is_finite() {
                return Err(TrainingError::NonFiniteLoss { step, loss, learning_rate: lr });
            }
            trace.push(loss);
        }
    }
    let (objective, policy, users) = match model {
        InitialModel::Dpo(p) => (Objective::Dpo, p, None),
        InitialModel::Pdpo(pp) => (Objective::Pdpo, pp.policy, Some(pp.users)),
    };
    Ok(TrainOutcome { objective, policy, users, reference, loss_trace: trace })
}

fn clip(grad: &mut LossGrad, max_norm: f64) {
    let mut sq: f64 = grad.policy.flat().iter().map(|v| v * v).sum();
    if let Some(u) = &grad.users {
        sq += u.flat().iter().map(|v| v * v).sum::<f64>();
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.policy.scale(s);
        if let Some(u) = &mut grad.users {
            u.scale(s);
        }
    }
}

/// Fraction of pairs where the chosen response is strictly more likely.
///
/// With a user model, each pair is scored under its own user's context.
pub fn pairwise_accuracy(
    dataset: &[PreferencePair],
    policy: &ToyPolicy,
    users: Option<&UserEmbeddingModel>,
) -> Result<f64, TrainingError> {
    if dataset.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    let mut correct = 0usize;
    for pair in dataset {
        let ctx = match users {
            Some(m) => Some(m.user_embedding(resolve(m, &pair.user)?)?),
            None => None,
        };
        let a = policy.log_prob(&pair.prompt, &pair.chosen, ctx.as_ref())?;
        let b = policy.log_prob(&pair.prompt, &pair.rejected, ctx.as_ref())?;
        if a > b {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn pair(user: &str, chosen: usize, rejected: usize) -> PreferencePair {
        PreferencePair { prompt: vec![1, 2], chosen: vec![chosen, 1], rejected: vec![rejected, 1], user: user.into() }
    }

    #[test]
    fn scalar_oracles() {
        assert!((-log_sigmoid(0.0) - LN2).abs() < 1e-15);
        assert!((-log_sigmoid(1.0) - 0.313_261_687_518_222_8).abs() < 1e-15);
        let combined = 0.5 * -log_sigmoid(0.5 * 2.0) + 0.5 * -log_sigmoid(0.0);
        assert!((combined - 0.503_204_6).abs() < 1e-6);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
    }

    #[test]
    fn reference_point_is_ln2() {
        let p = ToyPolicy::init(6, 3, 1).unwrap();
        let batch = vec![pair("u1", 3, 4), pair("u2", 5, 3)];
        for beta in [0.1, 0.5, 2.0] {
            assert!((dpo_loss(&batch, &p, &p, beta).unwrap() - LN2).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_and_unknown_user() {
        let p = ToyPolicy::init(6, 3, 1).unwrap();
        assert!(matches!(dpo_loss(&[], &p, &p, 0.5), Err(TrainingError::EmptyBatch)));
        let users = UserEmbeddingModel::init(2, 2, 3, &["u1"], 0).unwrap();
        let pp = PersonalizedPolicy { policy: p.clone(), users };
        let err = pdpo_loss(&[pair("ghost", 3, 4)], &pp, &p, 0.5, 0.5).unwrap_err();
        assert!(matches!(err, TrainingError::UnknownUser(ref u) if u == "ghost"));
        // generic id always resolves
        assert!(pdpo_loss(&[pair(GENERIC_USER, 3, 4)], &pp, &p, 0.5, 0.5).is_ok());
    }

    #[test]
    fn alpha_one_reduces_to_user_conditioned_dpo() {
        let reference = ToyPolicy::init(6, 3, 2).unwrap();
        let mut policy = reference.clone();
        policy.out.data[4] += 0.3;
        let users = UserEmbeddingModel::init(2, 2, 3, &["u1", "u2"], 3).unwrap();
        let pp = PersonalizedPolicy { policy: policy.clone(), users: users.clone() };
        let batch = vec![pair("u1", 3, 4), pair("u2", 5, 3)];
        let got = pdpo_loss(&batch, &pp, &reference, 1.0, 0.7).unwrap();
        let mut expected = 0.0;
        for p in &batch {
            let e = users.user_embedding(UserRef::Known(&p.user)).unwrap();
            expected += -log_sigmoid(0.7 * margin(&policy, &reference, p, Some(&e)).unwrap());
        }
        assert!((got - expected / 2.0).abs() < 1e-15);
        let got0 = pdpo_loss(&batch, &pp, &reference, 0.0, 0.7).unwrap();
        let g = users.user_embedding(UserRef::Generic).unwrap();
        let mut expected0 = 0.0;
        for p in &batch {
            expected0 += -log_sigmoid(0.7 * margin(&policy, &reference, p, Some(&g)).unwrap());
        }
        assert!((got0 - expected0 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn batch_order_invariance() {
        let reference = ToyPolicy::init(6, 3, 2).unwrap();
        let policy = ToyPolicy::init(6, 3, 8).unwrap();
        let mut batch = vec![pair("u", 3, 4), pair("u", 5, 3), pair("u", 2, 5), pair("u", 4, 2)];
        let a = dpo_loss(&batch, &policy, &reference, 0.5).unwrap();
        batch.reverse();
        let b = dpo_loss(&batch, &policy, &reference, 0.5).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn swapping_pairs_negates_the_margin() {
        let reference = ToyPolicy::init(6, 3, 2).unwrap();
        let policy = ToyPolicy::init(6, 3, 8).unwrap();
        let p = pair("u", 3, 4);
        let m = margin(&policy, &reference, &p, None).unwrap();
        let ms = margin(&policy, &reference, &p.swapped(), None).unwrap();
        assert!((m + ms).abs() < 1e-12);
        let l = dpo_loss(std::slice::from_ref(&p.swapped()), &policy, &reference, 0.5).unwrap();
        assert!((l + log_sigmoid(-0.5 * m)).abs() < 1e-12);
        // at the reference point the swap leaves the loss at ln 2
        assert!((dpo_loss(&[p.swapped()], &reference, &reference, 0.5).unwrap() - LN2).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let p = ToyPolicy::init(6, 3, 4).unwrap();
        let cfg = TrainingConfig { epochs: 0, ..Default::default() };
        let out = train(&[pair("u", 3, 4)], InitialModel::Dpo(p.clone()), &cfg, Exec::Sequential).unwrap();
        assert_eq!(out.policy, p);
        assert_eq!(out.loss_trace.len(), 1);
        assert!((out.loss_trace[0] - LN2).abs() < 1e-12);
    }

    #[test]
    fn separable_single_user_descends() {
        let data: Vec<_> = (0..6).map(|i| pair("u", 3 + i % 2, 5)).collect();
        let cfg = TrainingConfig { epochs: 20, batch_size: 3, learning_rate: 0.5, beta: 1.0, ..Default::default() };
        let out = train(&data, InitialModel::Dpo(ToyPolicy::init(6, 3, 4).unwrap()), &cfg, Exec::Sequential).unwrap();
        assert!(out.loss_trace.last().unwrap() < &out.loss_trace[0]);
        let again = train(&data, InitialModel::Dpo(ToyPolicy::init(6, 3, 4).unwrap()), &cfg, Exec::Parallel).unwrap();
        assert_eq!(out.loss_trace, again.loss_trace);
        assert!(out.loss_csv().starts_with("step,loss\n0,"));
    }

    #[test]
    fn divergence_is_reported() {
        let data: Vec<_> = (0..4).map(|_| pair("u", 3, 5)).collect();
        let cfg = TrainingConfig { epochs: 50, batch_size: 4, learning_rate: 1e200, beta: 1.0, ..Default::default() };
        let err = train(&data, InitialModel::Dpo(ToyPolicy::init(6, 3, 4).unwrap()), &cfg, Exec::Sequential).unwrap_err();
        assert!(matches!(err, TrainingError::NonFiniteLoss { .. }), "{err}");
    }

    #[test]
    fn schedule_shapes() {
        let cfg = TrainingConfig { learning_rate: 1.0, warmup_steps: 4, schedule: Schedule::Cosine, ..Default::default() };
        assert_eq!(cfg.learning_rate_at(0, 14), 0.25);
        assert_eq!(cfg.learning_rate_at(3, 14), 1.0);
        assert_eq!(cfg.learning_rate_at(4, 14), 1.0);
        assert!((cfg.learning_rate_at(9, 14) - 0.5).abs() < 1e-12);
        assert!(cfg.learning_rate_at(14, 14).abs() < 1e-12);
    }

    #[test]
    fn config_accepts_inert_names_only() {
        let cfg: TrainingConfig = serde_json::from_str(r#"{"alpha":0.3,"lora_r":8,"bf16":true}"#).unwrap();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.alpha, 0.3);
        assert_eq!(cfg.beta, 0.5);
        let cfg: TrainingConfig = serde_json::from_str(r#"{"alpah":0.3}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
