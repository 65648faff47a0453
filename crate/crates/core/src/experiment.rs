//! Trial orchestration for the simulation conditions.
//!
//! All randomness for a trial (layout, injected errors, per-call seeds) is
//! drawn from hash-derived streams before any parallel section, and the
//! four assistant replies of a round are merged in label order, so output
//! does not depend on thread scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Assistant, Judge, JudgeRequest, SimulatedUser, BASIC_SYSTEM_PROMPT};
use crate::exec::Exec;
use crate::json;
use crate::model::{ArmLabel, Conversation, Domain, JudgeRecord, ModelId, Role, Trial, UserProfile};
use crate::seed::{derive_seed, digest_hex, stream};

pub const DEFAULT_TURNS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("trial {trial} failed: {reason}")]
    Trial { trial: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    SimJudgement,
    SimDynamic,
    SeededDynamic,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::SimJudgement => "sim_judgement",
            Condition::SimDynamic => "sim_dynamic",
            Condition::SeededDynamic => "seeded_dynamic",
        }
    }

    pub fn needs_human_trials(self) -> bool {
        !matches!(self, Condition::SimDynamic)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "sim_judgement" | "sim_judgment" => Ok(Condition::SimJudgement),
            "sim_dynamic" => Ok(Condition::SimDynamic),
            "seeded_dynamic" => Ok(Condition::SeededDynamic),
            _ => Err(ExperimentError::Config(format!("unknown condition {s:?}"))),
        }
    }
}

/// Which label and display position each model gets, indexed by [`ModelId::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub labels: [ArmLabel; 4],
    pub positions: [u8; 4],
}

/// Independent uniform label and position permutations from the
/// `["layout", participant, domain]` stream.
pub fn randomize_trial_layout(master_seed: u64, participant: &str, domain: Domain) -> Layout {
    let mut rng = stream(master_seed, &["layout", participant, domain.as_str()]);
    let mut labels = ArmLabel::ALL;
    labels.shuffle(&mut rng);
    let mut positions = [0u8, 1, 2, 3];
    positions.shuffle(&mut rng);
    Layout { labels, positions }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorRates {
    #[serde(default)]
    pub first_turn: f64,
    #[serde(default)]
    pub subsequent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnBudget {
    /// User turns per arm.
    Fixed(usize),
    /// Each arm gets as many user turns as the same model had in the human trial.
    MatchHuman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub participants: Vec<UserProfile>,
    pub domains: Vec<Domain>,
    pub condition: Condition,
    pub turns: TurnBudget,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub error_injection: BTreeMap<ModelId, ErrorRates>,
    #[serde(default = "default_system_prompt")]
    pub system_prompt: String,
    /// Identifiers of the backends, echoed into the manifest.
    #[serde(default)]
    pub backend_ids: BTreeMap<String, String>,
}

fn default_system_prompt() -> String {
    BASIC_SYSTEM_PROMPT.to_string()
}

impl ExperimentPlan {
    pub fn new(participants: Vec<UserProfile>, domains: Vec<Domain>, condition: Condition, master_seed: u64) -> Self {
        Self {
            participants,
            domains,
            condition,
            turns: TurnBudget::Fixed(DEFAULT_TURNS),
            master_seed,
            error_injection: BTreeMap::new(),
            system_prompt: default_system_prompt(),
            backend_ids: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.participants.is_empty() || self.domains.is_empty() {
            return bad("plan needs at least one participant and one domain".into());
        }
        let ids: BTreeSet<&str> = self.participants.iter().map(|p| p.user_id.as_str()).collect();
        if ids.len() != self.participants.len() || ids.contains("") {
            return bad("participant ids must be non-empty and unique".into());
        }
        if self.turns == TurnBudget::Fixed(0) {
            return bad("turn budget must be >= 1".into());
        }
        for (m, r) in &self.error_injection {
            if !(0.0..=1.0).contains(&r.first_turn) || !(0.0..=1.0).contains(&r.subsequent) {
                return bad(format!("error rates for {m} must lie in [0,1]"));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_hex(json::to_line(self).expect("plan serializes").as_bytes())
    }
}

/// Live backends: one assistant per model (indexed by [`ModelId::index`]),
/// a simulated user and a judge.
#[derive(Clone)]
pub struct Agents {
    pub assistants: [Arc<dyn Assistant>; 4],
    pub user: Arc<dyn SimulatedUser>,
    pub judge: Arc<dyn Judge>,
    pub exec: Exec,
}

/// Injected failures per model: the set of assistant ordinals that fail.
fn draw_injected_errors(plan: &ExperimentPlan, participant: &str, domain: Domain, budgets: &[usize; 4]) -> [BTreeSet<u32>; 4] {
    let mut rng = stream(plan.master_seed, &["errors", participant, domain.as_str()]);
    let mut out: [BTreeSet<u32>; 4] = Default::default();
    for m in ModelId::ALL {
        let rates = plan.error_injection.get(&m).copied().unwrap_or_default();
        for round in 1..=budgets[m.index()] {
            let p = if round == 1 { rates.first_turn } else { rates.subsequent };
            // draw unconditionally so adding one rate never shifts other draws
            let u: f64 = rng.random();
            if u < p {
                out[m.index()].insert(round as u32);
            }
        }
    }
    out
}

fn error_text(kind: &str) -> String {
    format!("[generation error: {kind}]")
}

fn budgets(plan: &ExperimentPlan, human: Option<&Trial>) -> Result<[usize; 4], String> {
    match plan.turns {
        TurnBudget::Fixed(n) => Ok([n; 4]),
        TurnBudget::MatchHuman => {
            let h = human.ok_or("turn budget matches the human trial, which is missing")?;
            let mut out = [0; 4];
            for m in ModelId::ALL {
                let arm = h.arm_for_model(m).ok_or(format!("human trial has no {m} arm"))?;
                out[m.index()] = arm.n_user_turns().max(1);
            }
            Ok(out)
        }
    }
}

/// Runs one participant x domain block.
pub fn run_trial(
    plan: &ExperimentPlan,
    agents: &Agents,
    profile: &UserProfile,
    domain: Domain,
    human: Option<&Trial>,
) -> Result<Trial, ExperimentError> {
    let participant = profile.user_id.as_str();
    let trial_id = format!("{participant}/{domain}");
    let fail = |reason: String| ExperimentError::Trial { trial: trial_id.clone(), reason };
    let trial_seed = derive_seed(plan.master_seed, &["trial", participant, domain.as_str()]);
    let layout = randomize_trial_layout(plan.master_seed, participant, domain);

    let arms: Vec<Conversation> = if plan.condition == Condition::SimJudgement {
        let h = human.ok_or_else(|| fail("sim_judgement needs the human trial".into()))?;
        let mut arms = Vec::with_capacity(4);
        for m in ModelId::ALL {
            let src = h.arm_for_model(m).ok_or_else(|| fail(format!("human trial has no {m} arm")))?;
            let mut c = src.clone();
            c.label = layout.labels[m.index()];
            c.position = layout.positions[m.index()];
            arms.push(c);
        }
        arms
    } else {
        run_dynamic(plan, agents, profile, domain, human, &layout, trial_seed).map_err(fail)?
    };

    let mut arms = arms;
    arms.sort_by_key(|a| a.label);
    let request = JudgeRequest { profile, domain, arms: &arms };
    let (ranking, judge) = match agents.judge.rank(&request, derive_seed(trial_seed, &["judge"])) {
        Ok(out) => (Some(out.ranking), JudgeRecord { explanation: out.explanation, failure: None }),
        Err(e) => (None, JudgeRecord { explanation: String::new(), failure: Some(e.to_string()) }),
    };
    Ok(Trial {
        participant: participant.to_string(),
        domain,
        arms,
        opening_choice: None,
        ranking,
        ratings: BTreeMap::new(),
        wtp: BTreeMap::new(),
        seed: trial_seed,
        judge: Some(judge),
    })
}

fn run_dynamic(
    plan: &ExperimentPlan,
    agents: &Agents,
    profile: &UserProfile,
    domain: Domain,
    human: Option<&Trial>,
    layout: &Layout,
    trial_seed: u64,
) -> Result<Vec<Conversation>, String> {
    let budgets = budgets(plan, human)?;
    let injected = draw_injected_errors(plan, &profile.user_id, domain, &budgets);
    let mut openings: [Option<String>; 4] = Default::default();
    if plan.condition == Condition::SeededDynamic {
        let h = human.ok_or("seeded_dynamic needs the human trial")?;
        for m in ModelId::ALL {
            let text = h
                .arm_for_model(m)
                .and_then(Conversation::first_user_message)
                .ok_or(format!("human trial has no opening prompt for {m}"))?;
            openings[m.index()] = Some(text.to_string());
        }
    }
    // label order is the merge order
    let mut order: Vec<ModelId> = ModelId::ALL.to_vec();
    order.sort_by_key(|m| layout.labels[m.index()]);
    let mut convs: Vec<Conversation> =
        order.iter().map(|m| Conversation::new(*m, layout.labels[m.index()], layout.positions[m.index()])).collect();
    let rounds = budgets.iter().copied().max().unwrap_or(0);
    for round in 1..=rounds {
        let active: Vec<usize> = (0..4).filter(|&i| budgets[order[i].index()] >= round).collect();
        // the simulated user writes to each arm in turn
        for &i in &active {
            let label = convs[i].label.to_string();
            let seed = derive_seed(trial_seed, &["user", &label, &round.to_string()]);
            let msg = agents
                .user
                .message(profile, domain, &convs[i].turns, openings[order[i].index()].as_deref(), seed)
                .map_err(|e| format!("simulated user failed on arm {label}: {e}"))?;
            convs[i].push(Role::User, msg);
        }
        let replies = agents.exec.map(&active, |&i| {
            let m = order[i];
            if injected[m.index()].contains(&(round as u32)) {
                return Err("injected".to_string());
            }
            let seed = derive_seed(trial_seed, &["assistant", m.as_str(), &round.to_string()]);
            agents.assistants[m.index()]
                .respond(&convs[i].turns, &plan.system_prompt, seed)
                .map_err(|e| e.kind().to_string())
        });
        for (&i, reply) in active.iter().zip(replies) {
            match reply {
                Ok(text) => convs[i].push(Role::Assistant, text),
                Err(kind) => {
                    convs[i].push(Role::Assistant, error_text(&kind));
                    convs[i].error_turns.insert(round as u32);
                }
            }
        }
    }
    Ok(convs)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub first_turn: usize,
    pub subsequent: usize,
    pub judge_failures: usize,
    pub failed_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub condition: Condition,
    pub master_seed: u64,
    pub config_digest: String,
    pub plan: ExperimentPlan,
    pub n_trials: usize,
    pub trial_seeds: BTreeMap<String, u64>,
    pub errors: ErrorCounts,
    pub failures: Vec<String>,
    pub assistants: Vec<String>,
    pub simulated_user: String,
    pub judge: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub trials: Vec<Trial>,
    pub manifest: RunManifest,
}

fn human_index(human: Option<&[Trial]>) -> BTreeMap<(String, Domain), &Trial> {
    human.unwrap_or_default().iter().map(|t| ((t.participant.clone(), t.domain), t)).collect()
}

/// Runs every participant x domain block. Configuration problems (including
/// missing human trials) fail before any trial runs; per-trial failures are
/// counted in the manifest and the trial is left out.
pub fn run_experiment(
    plan: &ExperimentPlan,
    agents: &Agents,
    human_trials: Option<&[Trial]>,
) -> Result<ExperimentOutput, ExperimentError> {
    plan.validate()?;
    let index = human_index(human_trials);
    let needs_human = plan.condition.needs_human_trials() || plan.turns == TurnBudget::MatchHuman;
    let mut jobs = Vec::new();
    for p in &plan.participants {
        for &d in &plan.domains {
            let h = index.get(&(p.user_id.clone(), d)).copied();
            if needs_human && h.is_none() {
                return Err(ExperimentError::Config(format!(
                    "{} requires a human trial for {}/{d}, none supplied",
                    plan.condition, p.user_id
                )));
            }
            jobs.push((p, d, h));
        }
    }
    let results = agents.exec.map(&jobs, |(p, d, h)| run_trial(plan, agents, p, *d, *h));
    let mut trials = Vec::new();
    let mut errors = ErrorCounts::default();
    let mut failures = Vec::new();
    let mut trial_seeds = BTreeMap::new();
    for r in results {
        match r {
            Ok(t) => {
                for a in &t.arms {
                    let cov = crate::model::error_covariates(a);
                    errors.first_turn += usize::from(cov.first_turn);
                    errors.subsequent += usize::from(cov.subsequent);
                }
                if t.ranking.is_none() {
                    errors.judge_failures += 1;
                }
                trial_seeds.insert(t.id(), t.seed);
                trials.push(t);
            }
            Err(e) => {
                errors.failed_trials += 1;
                failures.push(e.to_string());
            }
        }
    }
    let manifest = RunManifest {
        condition: plan.condition,
        master_seed: plan.master_seed,
        config_digest: plan.digest(),
        plan: plan.clone(),
        n_trials: trials.len(),
        trial_seeds,
        errors,
        failures,
        assistants: agents.assistants.iter().map(|a| a.id()).collect(),
        simulated_user: agents.user.id(),
        judge: agents.judge.id(),
    };
    Ok(ExperimentOutput { trials, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ScriptedAssistant, ScriptedUser, UtilityFn, UtilityJudge};
    use crate::model::{Ranking, FilterStrategy};
    use crate::stats::chi_square_sf;

    pub(crate) fn marker_agents(exec: Exec) -> Agents {
        let mk = |m: ModelId, n: usize| -> Arc<dyn Assistant> {
            Arc::new(ScriptedAssistant::with_markers(m.as_str(), "answer {n}", "*", n))
        };
        Agents {
            assistants: [mk(ModelId::Base, 1), mk(ModelId::Dpft, 3), mk(ModelId::Ppft, 4), mk(ModelId::Prompting, 2)],
            user: Arc::new(ScriptedUser),
            judge: Arc::new(UtilityJudge::new(UtilityFn::MarkerCount { marker: "*".into() })),
            exec,
        }
    }

    fn people(n: usize) -> Vec<UserProfile> {
        (0..n).map(|i| UserProfile::new(format!("p{i}"))).collect()
    }

    #[test]
    fn layout_is_deterministic_and_varies() {
        let a = randomize_trial_layout(1, "p1", Domain::Values);
        assert_eq!(a, randomize_trial_layout(1, "p1", Domain::Values));
        let distinct: BTreeSet<_> = (0..50).map(|i| randomize_trial_layout(1, &format!("p{i}"), Domain::Values).labels).collect();
        assert!(distinct.len() > 10);
    }

    #[test]
    fn layout_uniformity_chi_square() {
        let mut pos = [[0u64; 4]; 4];
        let mut lab = [[0u64; 4]; 4];
        for i in 0..10_000 {
            let l = randomize_trial_layout(3, &format!("p{i}"), Domain::Unguided);
            for m in 0..4 {
                pos[m][l.positions[m] as usize] += 1;
                lab[m][l.labels[m].index()] += 1;
            }
        }
        for table in [pos, lab] {
            let chi: f64 = table.iter().flatten().map(|c| (*c as f64 - 2500.0).powi(2) / 2500.0).sum();
            assert!(chi_square_sf(chi, 12) > 0.001, "{table:?}");
            for row in table {
                for c in row {
                    assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.02);
                }
            }
        }
    }

    #[test]
    fn dynamic_marker_oracle() {
        let plan = ExperimentPlan::new(people(2), Domain::ALL.to_vec(), Condition::SimDynamic, 11);
        let out = run_experiment(&plan, &marker_agents(Exec::Parallel), None).unwrap();
        assert_eq!(out.trials.len(), 8);
        for t in &out.trials {
            t.validate().unwrap();
            assert_eq!(t.model_ranking().unwrap(), [ModelId::Ppft, ModelId::Dpft, ModelId::Prompting, ModelId::Base]);
            assert!(t.arms.iter().all(|a| a.n_user_turns() == DEFAULT_TURNS && a.error_turns.is_empty()));
        }
        assert_eq!(out.manifest.errors, ErrorCounts::default());
    }

    #[test]
    fn sequential_and_parallel_runs_are_identical() {
        let plan = ExperimentPlan::new(people(3), vec![Domain::Values, Domain::Emotional], Condition::SimDynamic, 5);
        let a = run_experiment(&plan, &marker_agents(Exec::Sequential), None).unwrap();
        let b = run_experiment(&plan, &marker_agents(Exec::Parallel), None).unwrap();
        assert_eq!(json::to_jsonl(&a.trials).unwrap(), json::to_jsonl(&b.trials).unwrap());
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn forced_first_turn_errors() {
        let mut plan = ExperimentPlan::new(people(3), vec![Domain::Controversy], Condition::SimDynamic, 2);
        plan.error_injection.insert(ModelId::Dpft, ErrorRates { first_turn: 1.0, subsequent: 0.0 });
        let out = run_experiment(&plan, &marker_agents(Exec::Parallel), None).unwrap();
        for t in &out.trials {
            let arm = t.arm_for_model(ModelId::Dpft).unwrap();
            assert!(crate::model::error_covariates(arm).first_turn);
            assert!(arm.turns[1].text.starts_with("[generation error"));
        }
        assert_eq!(out.manifest.errors.first_turn, 3);
        let split = crate::model::filter_trials(&out.trials, FilterStrategy::SplitControl);
        assert_eq!(split.trials.len(), 3);
    }

    fn human_trial(p: &str, d: Domain) -> Trial {
        let arms = ModelId::ALL
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let mut c = Conversation::new(m, ArmLabel::ALL[i], i as u8);
                for r in 0..=i {
                    c.push(Role::User, format!("human {m} {r}"));
                    c.push(Role::Assistant, format!("model reply {r} {}", "*".repeat(i)));
                }
                c
            })
            .collect();
        Trial {
            participant: p.into(),
            domain: d,
            arms,
            opening_choice: Some(ArmLabel::A),
            ranking: Some(Ranking::new(ArmLabel::ALL).unwrap()),
            ratings: BTreeMap::new(),
            wtp: BTreeMap::new(),
            seed: 0,
            judge: None,
        }
    }

    #[test]
    fn sim_judgement_keeps_transcripts() {
        let humans = vec![human_trial("p0", Domain::Values)];
        let plan = ExperimentPlan::new(people(1), vec![Domain::Values], Condition::SimJudgement, 4);
        let out = run_experiment(&plan, &marker_agents(Exec::Parallel), Some(&humans)).unwrap();
        let t = &out.trials[0];
        for m in ModelId::ALL {
            assert_eq!(t.arm_for_model(m).unwrap().turns, humans[0].arm_for_model(m).unwrap().turns);
        }
        assert_eq!(t.model_ranking().unwrap()[0], ModelId::Prompting);
    }

    #[test]
    fn missing_human_trial_is_a_config_error() {
        let plan = ExperimentPlan::new(people(2), vec![Domain::Values], Condition::SimJudgement, 4);
        let humans = vec![human_trial("p0", Domain::Values)];
        let err = run_experiment(&plan, &marker_agents(Exec::Parallel), Some(&humans)).unwrap_err();
        assert!(matches!(err, ExperimentError::Config(_)));
    }

    #[test]
    fn seeded_dynamic_uses_human_openings_and_matched_turns() {
        let humans = vec![human_trial("p0", Domain::Values)];
        let mut plan = ExperimentPlan::new(people(1), vec![Domain::Values], Condition::SeededDynamic, 4);
        plan.turns = TurnBudget::MatchHuman;
        let out = run_experiment(&plan, &marker_agents(Exec::Parallel), Some(&humans)).unwrap();
        let t = &out.trials[0];
        for (i, m) in ModelId::ALL.iter().enumerate() {
            let arm = t.arm_for_model(*m).unwrap();
            assert_eq!(arm.first_user_message().unwrap(), format!("human {m} 0"));
            assert_eq!(arm.n_user_turns(), i + 1);
        }
    }

    struct FailingJudge;
    impl Judge for FailingJudge {
        fn id(&self) -> String {
            "failing".into()
        }
        fn rank(&self, _r: &JudgeRequest<'_>, _s: u64) -> Result<crate::agents::JudgeOutput, crate::agents::JudgeError> {
            Err(crate::model::ModelError::NoRankingFound.into())
        }
    }

    #[test]
    fn judge_failure_is_recorded() {
        let mut agents = marker_agents(Exec::Sequential);
        agents.judge = Arc::new(FailingJudge);
        let plan = ExperimentPlan::new(people(1), vec![Domain::Values], Condition::SimDynamic, 4);
        let out = run_experiment(&plan, &agents, None).unwrap();
        assert!(out.trials[0].ranking.is_none());
        assert!(out.trials[0].judge.as_ref().unwrap().failure.is_some());
        assert_eq!(out.manifest.errors.judge_failures, 1);
    }
}
