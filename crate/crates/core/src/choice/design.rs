//! Design builders from trials: model dummies (reference Base), error
//! covariates per the filter plan, and position dummies (reference A).

use serde::{Deserialize, Serialize};

use super::{fit_conditional_logit, ChoiceData, ChoiceObservation, FitError, FitOptions, FitResult, RankedSet};
use crate::model::{ArmLabel, Conversation, FilterOutcome, FilteredTrial, ModelId, RatingScale, Trial};

pub const MODEL_DUMMIES: [&str; 3] = ["DPFT", "PPFT", "Prompting"];
pub const POSITION_DUMMIES: [&str; 3] = ["position_B", "position_C", "position_D"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceTarget {
    /// The arm ranked first among the included arms.
    RankedBest,
    /// The arm picked to continue after the opening turn.
    OpeningChoice,
}

fn model_dummies(model: ModelId) -> Vec<f64> {
    ModelId::ALL[1..].iter().map(|m| if *m == model { 1.0 } else { 0.0 }).collect()
}

pub fn covariate_names(outcome: &FilterOutcome) -> Vec<String> {
    MODEL_DUMMIES.iter().chain(outcome.plan.names()).map(|s| s.to_string()).collect()
}

fn arm_covariates(outcome: &FilterOutcome, ft: &FilteredTrial, arm: &Conversation) -> Vec<f64> {
    let mut x = model_dummies(arm.model);
    x.extend(outcome.plan.values(ft.trial.covariates(arm.label)));
    x
}

/// Included labels in ranked order; `None` without a ranking.
fn included_order(ft: &FilteredTrial) -> Option<Vec<ArmLabel>> {
    let r = ft.trial.ranking?;
    Some(r.labels().iter().copied().filter(|l| !ft.excluded_arms.contains(l)).collect())
}

/// Conditional-logit data with one stratum per retained trial. Trials that
/// lack the target (or whose opening choice was excluded) are counted and skipped.
pub fn choice_data(outcome: &FilterOutcome, target: ChoiceTarget) -> (ChoiceData, usize) {
    let mut observations = Vec::new();
    let mut skipped = 0;
    for ft in &outcome.trials {
        let pick = match target {
            ChoiceTarget::RankedBest => included_order(ft).and_then(|o| o.first().copied()),
            ChoiceTarget::OpeningChoice => ft.trial.opening_choice.filter(|l| !ft.excluded_arms.contains(l)),
        };
        let Some(pick) = pick else {
            skipped += 1;
            continue;
        };
        let id = ft.trial.id();
        for arm in ft.included_arms() {
            observations.push(ChoiceObservation {
                stratum: id.clone(),
                alternative: arm.model.to_string(),
                covariates: arm_covariates(outcome, ft, arm),
                chosen: arm.label == pick,
                cluster: ft.trial.participant.clone(),
            });
        }
    }
    (ChoiceData { names: covariate_names(outcome), observations }, skipped)
}

/// Ranked sets for the rank-ordered logit, restricted to included arms.
pub fn ranked_sets(outcome: &FilterOutcome) -> (Vec<String>, Vec<RankedSet>) {
    let mut sets = Vec::new();
    for ft in &outcome.trials {
        let Some(order) = included_order(ft) else { continue };
        let arms: Vec<&Conversation> = ft.included_arms().collect();
        let alternatives = arms.iter().map(|a| (a.model.to_string(), arm_covariates(outcome, ft, a))).collect();
        let ranking = order.iter().map(|l| arms.iter().position(|a| a.label == *l).expect("included arm")).collect();
        sets.push(RankedSet { id: ft.trial.id(), cluster: ft.trial.participant.clone(), alternatives, ranking });
    }
    (covariate_names(outcome), sets)
}

/// Rankings as model indices (Base, DPFT, PPFT, Prompting), best first.
pub fn model_rankings(outcome: &FilterOutcome) -> Vec<Vec<usize>> {
    outcome
        .trials
        .iter()
        .filter_map(|ft| {
            let order = included_order(ft)?;
            order.iter().map(|l| ft.trial.model_of(*l).map(ModelId::index)).collect()
        })
        .collect()
}

/// Long-format rating regression: one row per included arm with a rating on
/// `scale`, design `[const, model dummies, error covariates]`.
pub struct RatingDesign {
    pub y: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub clusters: Vec<String>,
    pub names: Vec<String>,
}

pub fn rating_design(outcome: &FilterOutcome, scale: RatingScale) -> RatingDesign {
    let mut d = RatingDesign { y: Vec::new(), x: Vec::new(), clusters: Vec::new(), names: vec!["const".into()] };
    d.names.extend(covariate_names(outcome));
    for ft in &outcome.trials {
        let Some(m) = ft.trial.ratings.get(&scale) else { continue };
        for arm in ft.included_arms() {
            let Some(&v) = m.get(&arm.label) else { continue };
            let mut row = vec![1.0];
            row.extend(arm_covariates(outcome, ft, arm));
            d.y.push(v);
            d.x.push(row);
            d.clusters.push(ft.trial.participant.clone());
        }
    }
    d
}

/// Trials from one ranking source (e.g. "human", "sim_judgement").
#[derive(Debug, Clone)]
pub struct SourceTrials<'a> {
    pub source: String,
    pub trials: &'a [Trial],
}

/// Ranked-best data with position dummies. With `interactions`, every
/// non-reference source adds `position_X:source` columns.
pub fn position_bias_data(sources: &[SourceTrials<'_>], reference: &str, interactions: bool) -> ChoiceData {
    let others: Vec<&str> =
        sources.iter().map(|s| s.source.as_str()).filter(|s| *s != reference).collect::<Vec<_>>();
    let mut names: Vec<String> = POSITION_DUMMIES.iter().map(|s| s.to_string()).collect();
    if interactions {
        for src in &others {
            names.extend(POSITION_DUMMIES.iter().map(|p| format!("{p}:{src}")));
        }
    }
    let mut observations = Vec::new();
    for s in sources {
        for t in s.trials {
            let Some(r) = t.ranking else { continue };
            let stratum = format!("{}|{}", s.source, t.id());
            for arm in &t.arms {
                let pos: Vec<f64> = (1..4u8).map(|p| if arm.position == p { 1.0 } else { 0.0 }).collect();
                let mut x = pos.clone();
                if interactions {
                    for src in &others {
                        let on = if s.source == *src { 1.0 } else { 0.0 };
                        x.extend(pos.iter().map(|v| v * on));
                    }
                }
                observations.push(ChoiceObservation {
                    stratum: stratum.clone(),
                    alternative: arm.label.to_string(),
                    covariates: x,
                    chosen: arm.label == r.best(),
                    cluster: t.participant.clone(),
                });
            }
        }
    }
    ChoiceData { names, observations }
}

pub fn position_bias_fit(
    sources: &[SourceTrials<'_>],
    reference: &str,
    interactions: bool,
    opts: &FitOptions,
) -> Result<FitResult, FitError> {
    let mut fit = fit_conditional_logit(&position_bias_data(sources, reference, interactions), opts)?;
    fit.model = "position_bias".into();
    Ok(fit)
}

/// Share of top ranks per display position; 0.25 each without bias.
pub fn top_rank_share_by_position(trials: &[Trial]) -> [f64; 4] {
    let mut counts = [0usize; 4];
    let mut n = 0usize;
    for t in trials {
        if let Some(arm) = t.ranking.and_then(|r| t.arm(r.best())) {
            counts[arm.position as usize] += 1;
            n += 1;
        }
    }
    counts.map(|c| if n == 0 { f64::NAN } else { c as f64 / n as f64 })
}
