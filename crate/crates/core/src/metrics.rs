//! Ranking-fidelity metrics between simulated and human judgements.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::model::{ratings_to_rank, ModelId, RatingScale, Trial};
use crate::seed::stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("rankings are not permutations of the same labels")]
    LabelMismatch,
    #[error("vectors must have equal length >= 2")]
    LengthMismatch,
    #[error("zero variance: correlation undefined")]
    ZeroVariance,
    #[error("no observations")]
    Empty,
    #[error("conditions share no trial ids")]
    NoOverlap,
}

/// A simulated and a human ranking of the same trial, best first. Labels
/// are model identities, so rankings from different layouts are comparable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedTrialPair {
    pub trial_id: String,
    #[serde(default)]
    pub participant: String,
    pub sim_rank: Vec<String>,
    pub human_rank: Vec<String>,
}

impl MatchedTrialPair {
    pub fn from_trials(sim: &Trial, human: &Trial) -> Option<Self> {
        let names = |r: [ModelId; 4]| r.iter().map(|m| m.to_string()).collect();
        Some(Self {
            trial_id: human.id(),
            participant: human.participant.clone(),
            sim_rank: names(sim.model_ranking()?),
            human_rank: names(human.model_ranking()?),
        })
    }

    pub fn tau(&self) -> Result<f64, MetricError> {
        kendall_tau(&self.sim_rank, &self.human_rank)
    }
}

fn positions<T: Ord + Clone>(r: &[T]) -> Result<BTreeMap<T, usize>, MetricError> {
    let map: BTreeMap<T, usize> = r.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
    if map.len() != r.len() {
        return Err(MetricError::LabelMismatch);
    }
    Ok(map)
}

/// `(C - D) / (n choose 2)` over all unordered item pairs; `(C - D)/6` for four items.
pub fn kendall_tau<T: Ord + Clone>(a: &[T], b: &[T]) -> Result<f64, MetricError> {
    let pa = positions(a)?;
    let pb = positions(b)?;
    if pa.len() < 2 || !pa.keys().eq(pb.keys()) {
        return Err(MetricError::LabelMismatch);
    }
    let items: Vec<&T> = pa.keys().collect();
    let mut score = 0i64;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let da = pa[items[i]] as i64 - pa[items[j]] as i64;
            let db = pb[items[i]] as i64 - pb[items[j]] as i64;
            score += (da * db).signum();
        }
    }
    let pairs = (items.len() * (items.len() - 1) / 2) as f64;
    Ok(score as f64 / pairs)
}

/// Whether the first `k` entries agree in order.
pub fn top_k_match<T: PartialEq>(a: &[T], b: &[T], k: usize) -> bool {
    k <= a.len() && k <= b.len() && a[..k] == b[..k]
}

pub fn top_k_accuracy(pairs: &[MatchedTrialPair], k: usize) -> f64 {
    if pairs.is_empty() {
        return f64::NAN;
    }
    pairs.iter().filter(|p| top_k_match(&p.sim_rank, &p.human_rank, k)).count() as f64 / pairs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapUnit {
    #[default]
    Trial,
    Participant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub iterations: usize,
    pub seed: u64,
    pub unit: BootstrapUnit,
    pub level: f64,
    pub exec: Exec,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { iterations: 1000, seed: 0, unit: BootstrapUnit::Trial, level: 0.95, exec: Exec::Parallel }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resampled statistics, one per iteration, each from its own derived stream.
/// `groups` lists resampling units as index sets into the data.
pub fn bootstrap_replicates<F>(groups: &[Vec<usize>], opts: &BootstrapOptions, label: &str, stat: F) -> Vec<f64>
where
    F: Fn(&[usize]) -> f64 + Sync + Send,
{
    let g = groups.len();
    opts.exec.map_range(opts.iterations, |b| {
        let mut rng = stream(opts.seed, &["bootstrap", label, &b.to_string()]);
        let mut idx = Vec::new();
        for _ in 0..g {
            idx.extend_from_slice(&groups[rng.random_range(0..g)]);
        }
        stat(&idx)
    })
}

fn groups_for(participants: &[&str], unit: BootstrapUnit) -> Vec<Vec<usize>> {
    match unit {
        BootstrapUnit::Trial => (0..participants.len()).map(|i| vec![i]).collect(),
        BootstrapUnit::Participant => {
            let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, p) in participants.iter().enumerate() {
                by.entry(p).or_default().push(i);
            }
            by.into_values().collect()
        }
    }
}

fn mean_of(values: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
}

/// Mean with a percentile bootstrap interval.
pub fn bootstrap_mean(values: &[f64], participants: &[&str], opts: &BootstrapOptions, label: &str) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate { value: f64::NAN, ci_low: f64::NAN, ci_high: f64::NAN, n: 0 };
    }
    let value = values.iter().sum::<f64>() / n as f64;
    let groups = groups_for(participants, opts.unit);
    let mut reps = bootstrap_replicates(&groups, opts, label, |idx| mean_of(values, idx));
    reps.sort_by(f64::total_cmp);
    let a = (1.0 - opts.level) / 2.0;
    Estimate { value, ci_low: quantile_sorted(&reps, a), ci_high: quantile_sorted(&reps, 1.0 - a), n }
}

fn participants(pairs: &[MatchedTrialPair]) -> Vec<&str> {
    pairs.iter().map(|p| if p.participant.is_empty() { p.trial_id.as_str() } else { p.participant.as_str() }).collect()
}

pub fn mean_tau(pairs: &[MatchedTrialPair], opts: &BootstrapOptions) -> Result<Estimate, MetricError> {
    let taus = pairs.iter().map(MatchedTrialPair::tau).collect::<Result<Vec<_>, _>>()?;
    Ok(bootstrap_mean(&taus, &participants(pairs), opts, "mean_tau"))
}

pub fn top_k_estimate(pairs: &[MatchedTrialPair], k: usize, opts: &BootstrapOptions) -> Estimate {
    let hits: Vec<f64> =
        pairs.iter().map(|p| if top_k_match(&p.sim_rank, &p.human_rank, k) { 1.0 } else { 0.0 }).collect();
    bootstrap_mean(&hits, &participants(pairs), opts, &format!("top_{k}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfConsistency {
    pub tau: Estimate,
    pub top1: Estimate,
    pub n_used: usize,
    pub n_tied_excluded: usize,
    pub n_incomplete: usize,
}

/// Ratings-implied rank against the explicit ranking of the same trial.
pub fn self_consistency_pairs(trials: &[Trial], scale: RatingScale) -> (Vec<MatchedTrialPair>, usize, usize) {
    let mut pairs = Vec::new();
    let (mut tied, mut incomplete) = (0, 0);
    for t in trials {
        let (Some(scores), Some(ranking)) = (t.scores(scale), t.ranking) else {
            incomplete += 1;
            continue;
        };
        let (implied, tie) = ratings_to_rank(&scores);
        if tie {
            tied += 1;
            continue;
        }
        let label = |r: &crate::model::Ranking| r.labels().iter().map(|l| l.to_string()).collect();
        pairs.push(MatchedTrialPair {
            trial_id: t.id(),
            participant: t.participant.clone(),
            sim_rank: label(&implied),
            human_rank: label(&ranking),
        });
    }
    (pairs, tied, incomplete)
}

/// `None` when no trial survives exclusion.
pub fn self_consistency(trials: &[Trial], opts: &BootstrapOptions) -> Option<SelfConsistency> {
    let (pairs, tied, incomplete) = self_consistency_pairs(trials, RatingScale::Preference);
    if pairs.is_empty() {
        return None;
    }
    Some(SelfConsistency {
        tau: mean_tau(&pairs, opts).expect("label rankings are permutations"),
        top1: top_k_estimate(&pairs, 1, opts),
        n_used: pairs.len(),
        n_tied_excluded: tied,
        n_incomplete: incomplete,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorthAgreement {
    pub r: f64,
    pub rmse: f64,
}

pub fn worth_agreement(a: &[f64], b: &[f64]) -> Result<WorthAgreement, MetricError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(MetricError::LengthMismatch);
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb, mut sq) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
        sq += (x - y).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok(WorthAgreement { r: sab / (saa * sbb).sqrt(), rmse: (sq / n).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMetric {
    Tau,
    TopK(usize),
}

impl PairMetric {
    fn value(self, p: &MatchedTrialPair) -> Result<f64, MetricError> {
        match self {
            PairMetric::Tau => p.tau(),
            PairMetric::TopK(k) => Ok(if top_k_match(&p.sim_rank, &p.human_rank, k) { 1.0 } else { 0.0 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionComparison {
    pub metric: PairMetric,
    /// Mean of condition A minus mean of condition B over shared trials.
    pub difference: Estimate,
    /// Two-sided percentile p-value: twice the smaller tail mass beyond 0.
    pub p: f64,
}

/// Paired bootstrap over trial ids present in both conditions.
pub fn compare_conditions(
    a: &[MatchedTrialPair],
    b: &[MatchedTrialPair],
    metric: PairMetric,
    opts: &BootstrapOptions,
) -> Result<ConditionComparison, MetricError> {
    let bmap: BTreeMap<&str, &MatchedTrialPair> = b.iter().map(|p| (p.trial_id.as_str(), p)).collect();
    let mut diffs = Vec::new();
    let mut who = Vec::new();
    let mut seen = BTreeSet::new();
    for p in a {
        if let Some(q) = bmap.get(p.trial_id.as_str()) {
            if seen.insert(p.trial_id.as_str()) {
                diffs.push(metric.value(p)? - metric.value(q)?);
                who.push(if p.participant.is_empty() { p.trial_id.as_str() } else { p.participant.as_str() });
            }
        }
    }
    if diffs.is_empty() {
        return Err(MetricError::NoOverlap);
    }
    let value = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let groups = groups_for(&who, opts.unit);
    let mut reps = bootstrap_replicates(&groups, opts, "compare", |idx| mean_of(&diffs, idx));
    reps.sort_by(f64::total_cmp);
    let m = reps.len() as f64;
    let below = reps.iter().filter(|v| **v <= 0.0).count() as f64 / m;
    let above = reps.iter().filter(|v| **v >= 0.0).count() as f64 / m;
    let alpha = (1.0 - opts.level) / 2.0;
    Ok(ConditionComparison {
        metric,
        difference: Estimate {
            value,
            ci_low: quantile_sorted(&reps, alpha),
            ci_high: quantile_sorted(&reps, 1.0 - alpha),
            n: diffs.len(),
        },
        p: (2.0 * below.min(above)).min(1.0),
    })
}

/// One machine-readable metric row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
    pub seed: u64,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, e: &Estimate, seed: u64) -> Self {
        Self { metric: metric.into(), value: e.value, ci_low: e.ci_low, ci_high: e.ci_high, n: e.n, seed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn pair(id: &str, sim: &[&str], human: &[&str]) -> MatchedTrialPair {
        MatchedTrialPair { trial_id: id.into(), participant: String::new(), sim_rank: s(sim), human_rank: s(human) }
    }

    #[test]
    fn tau_examples() {
        let h = ["A", "B", "C", "D"];
        assert_eq!(kendall_tau(&h, &h).unwrap(), 1.0);
        assert_eq!(kendall_tau(&["D", "C", "B", "A"], &h).unwrap(), -1.0);
        assert!((kendall_tau(&["B", "A", "C", "D"], &h).unwrap() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(kendall_tau(&["A", "B", "C", "E"], &h), Err(MetricError::LabelMismatch));
        assert_eq!(kendall_tau(&["A", "A", "C", "D"], &h), Err(MetricError::LabelMismatch));
    }

    #[test]
    fn top_k_examples() {
        let p = [pair("t", &["A", "C", "B", "D"], &["A", "B", "C", "D"])];
        assert_eq!(
            [top_k_accuracy(&p, 1), top_k_accuracy(&p, 2), top_k_accuracy(&p, 3)],
            [1.0, 0.0, 0.0]
        );
        let same = [pair("t", &["A", "B", "C", "D"], &["A", "B", "C", "D"])];
        assert!((1..=3).all(|k| top_k_accuracy(&same, k) == 1.0));
    }

    #[test]
    fn uniform_sim_expectations_by_enumeration() {
        let perms = crate::model::Ranking::all_permutations();
        let human = ["A", "B", "C", "D"];
        let as_str = |r: &crate::model::Ranking| r.labels().iter().map(|l| l.to_string()).collect::<Vec<_>>();
        let pairs: Vec<MatchedTrialPair> = perms
            .iter()
            .enumerate()
            .map(|(i, r)| MatchedTrialPair {
                trial_id: i.to_string(),
                participant: String::new(),
                sim_rank: as_str(r),
                human_rank: s(&human),
            })
            .collect();
        assert_eq!(top_k_accuracy(&pairs, 1), 0.25);
        assert_eq!(top_k_accuracy(&pairs, 3), 1.0 / 24.0);
        let mean: f64 = pairs.iter().map(|p| p.tau().unwrap()).sum::<f64>() / 24.0;
        assert!(mean.abs() < 1e-15);
    }

    #[test]
    fn mean_tau_examples() {
        let opts = BootstrapOptions { iterations: 200, seed: 3, ..Default::default() };
        let same: Vec<_> = (0..5).map(|i| pair(&i.to_string(), &["A", "B", "C", "D"], &["A", "B", "C", "D"])).collect();
        let e = mean_tau(&same, &opts).unwrap();
        assert_eq!((e.value, e.ci_low, e.ci_high), (1.0, 1.0, 1.0));
        let mixed = [pair("1", &["A", "B", "C", "D"], &["A", "B", "C", "D"]), pair("2", &["D", "C", "B", "A"], &["A", "B", "C", "D"])];
        assert_eq!(mean_tau(&mixed, &opts).unwrap().value, 0.0);
    }

    #[test]
    fn bootstrap_is_mode_independent() {
        let values: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let ids: Vec<String> = (0..50).map(|i| format!("p{}", i % 7)).collect();
        let who: Vec<&str> = ids.iter().map(String::as_str).collect();
        for unit in [BootstrapUnit::Trial, BootstrapUnit::Participant] {
            let seq = BootstrapOptions { iterations: 300, seed: 9, unit, level: 0.95, exec: Exec::Sequential };
            let par = BootstrapOptions { exec: Exec::Parallel, ..seq };
            assert_eq!(bootstrap_mean(&values, &who, &seq, "x"), bootstrap_mean(&values, &who, &par, "x"));
        }
    }

    #[test]
    fn self_consistency_cases() {
        use crate::model::{ArmLabel::*, Conversation, Domain, Ranking};
        let mk = |ratings: [f64; 4], order: [crate::model::ArmLabel; 4]| Trial {
            participant: "p".into(),
            domain: Domain::Values,
            arms: ModelId::ALL
                .iter()
                .enumerate()
                .map(|(i, &m)| Conversation::new(m, crate::model::ArmLabel::ALL[i], i as u8))
                .collect(),
            opening_choice: None,
            ranking: Some(Ranking::new(order).unwrap()),
            ratings: [(RatingScale::Preference, [(A, ratings[0]), (B, ratings[1]), (C, ratings[2]), (D, ratings[3])].into())].into(),
            wtp: BTreeMap::new(),
            seed: 0,
            judge: None,
        };
        let opts = BootstrapOptions { iterations: 50, ..Default::default() };
        let agree = vec![mk([90.0, 70.0, 50.0, 10.0], [A, B, C, D])];
        let r = self_consistency(&agree, &opts).unwrap();
        assert_eq!((r.tau.value, r.top1.value), (1.0, 1.0));
        let reverse = vec![mk([10.0, 50.0, 70.0, 90.0], [A, B, C, D])];
        assert_eq!(self_consistency(&reverse, &opts).unwrap().tau.value, -1.0);
        let tied = vec![mk([50.0; 4], [A, B, C, D])];
        assert!(self_consistency(&tied, &opts).is_none());
    }

    #[test]
    fn worth_agreement_examples() {
        let a = [0.22, 0.30, 0.31, 0.17];
        let w = worth_agreement(&a, &a).unwrap();
        assert!((w.r - 1.0).abs() < 1e-12 && w.rmse == 0.0);
        let c = [-1.0, 0.5, 0.5];
        let neg: Vec<f64> = c.iter().map(|v| -v).collect();
        assert!((worth_agreement(&c, &neg).unwrap().r + 1.0).abs() < 1e-12);
        let b = [0.21, 0.30, 0.32, 0.17];
        assert!((worth_agreement(&a, &b).unwrap().rmse - 0.0070710678118654).abs() < 1e-9);
        assert_eq!(worth_agreement(&[1.0, 1.0], &[0.0, 2.0]), Err(MetricError::ZeroVariance));
    }

    #[test]
    fn compare_identical_conditions() {
        let a = vec![pair("1", &["A", "B", "C", "D"], &["A", "B", "C", "D"]), pair("2", &["B", "A", "C", "D"], &["A", "B", "C", "D"])];
        let opts = BootstrapOptions { iterations: 100, ..Default::default() };
        let c = compare_conditions(&a, &a, PairMetric::Tau, &opts).unwrap();
        assert_eq!((c.difference.value, c.p), (0.0, 1.0));
        assert_eq!(compare_conditions(&a, &[], PairMetric::Tau, &opts), Err(MetricError::NoOverlap));
    }

    fn perm() -> impl Strategy<Value = Vec<u8>> {
        Just(vec![0u8, 1, 2, 3]).prop_shuffle()
    }

    proptest! {
        #[test]
        fn tau_symmetric_and_relabel_invariant(a in perm(), b in perm(), relabel in perm()) {
            let t = kendall_tau(&a, &b).unwrap();
            prop_assert_eq!(t, kendall_tau(&b, &a).unwrap());
            let ra: Vec<u8> = a.iter().map(|&x| relabel[x as usize]).collect();
            let rb: Vec<u8> = b.iter().map(|&x| relabel[x as usize]).collect();
            prop_assert_eq!(t, kendall_tau(&ra, &rb).unwrap());
            if top_k_match(&a, &b, 3) {
                prop_assert_eq!(t, 1.0);
            }
        }

        #[test]
        fn bootstrap_ci_contains_mean(values in prop::collection::vec(0.0f64..1.0, 5..40), seed in 0u64..1000) {
            let who: Vec<String> = (0..values.len()).map(|i| i.to_string()).collect();
            let who: Vec<&str> = who.iter().map(String::as_str).collect();
            let opts = BootstrapOptions { iterations: 200, seed, exec: Exec::Sequential, ..Default::default() };
            let e = bootstrap_mean(&values, &who, &opts, "p");
            prop_assert!(e.ci_low <= e.value && e.value <= e.ci_high);
        }
    }
}
