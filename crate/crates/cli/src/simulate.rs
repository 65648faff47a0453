use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use prefsim::agents::{
    Assistant, AssistantBackend, HttpChatClient, HttpChatConfig, Judge, LlmJudge, LlmUser, ScriptedAssistant,
    ScriptedUser, SimulatedUser, UtilityFn, UtilityJudge,
};
use prefsim::exec::Exec;
use prefsim::experiment::{run_experiment, Agents, Condition, ErrorRates, ExperimentError, ExperimentPlan, TurnBudget};
use prefsim::model::{Domain, ModelId, Trial, UserProfile};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Classify};
use crate::io::{out_dir, read_json, read_rows, trials_only, write_file};
use crate::Global;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// sim_judgement, sim_dynamic or seeded_dynamic.
    #[arg(long, default_value = "sim_dynamic")]
    condition: String,
    /// Simulation config (JSON): participants, domains, backends.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Human trials (JSONL) to replay or match.
    #[arg(long)]
    human_trials: Option<PathBuf>,
    /// Participant profiles (JSONL); overrides those in the config.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// User turns per arm; defaults to matching the human trial when one is given.
    #[arg(long)]
    turns: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum UserBackend {
    #[default]
    Scripted,
    HttpChat {
        #[serde(flatten)]
        config: HttpChatConfig,
        #[serde(default = "user_temperature")]
        temperature: f64,
        #[serde(default = "user_max_tokens")]
        max_tokens: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum JudgeBackend {
    Utility(UtilityJudge),
    HttpChat {
        #[serde(flatten)]
        config: HttpChatConfig,
        #[serde(default)]
        max_transcript_tokens: Option<usize>,
    },
}

impl Default for JudgeBackend {
    fn default() -> Self {
        JudgeBackend::Utility(UtilityJudge::new(UtilityFn::MarkerCount { marker: "*".into() }))
    }
}

fn user_temperature() -> f64 {
    0.1
}
fn user_max_tokens() -> usize {
    4096
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    #[serde(default)]
    participants: Vec<UserProfile>,
    #[serde(default)]
    domains: Vec<Domain>,
    #[serde(default)]
    error_injection: BTreeMap<ModelId, ErrorRates>,
    #[serde(default)]
    system_prompt: Option<String>,
    /// One backend per model; missing models get a scripted stand-in.
    #[serde(default)]
    assistants: BTreeMap<ModelId, AssistantBackend>,
    #[serde(default)]
    user: UserBackend,
    #[serde(default)]
    judge: JudgeBackend,
}

/// Stand-in replies carry `i + 1` markers for model index `i`.
fn default_assistant(m: ModelId) -> AssistantBackend {
    AssistantBackend::Scripted(ScriptedAssistant::with_markers(m.as_str(), "Here is a suggestion (round {n}).", "*", m.index() + 1))
}

fn build_agents(cfg: &SimulateConfig, trace: bool) -> Result<(Agents, BTreeMap<String, String>), CliError> {
    let mut ids = BTreeMap::new();
    let mut assistants: Vec<Arc<dyn Assistant>> = Vec::new();
    for m in ModelId::ALL {
        let backend = cfg.assistants.get(&m).cloned().unwrap_or_else(|| default_assistant(m));
        let a = backend.build(trace).invalid(&format!("assistant backend for {m}"))?;
        ids.insert(m.to_string(), a.id());
        assistants.push(a);
    }
    let user: Arc<dyn SimulatedUser> = match &cfg.user {
        UserBackend::Scripted => Arc::new(ScriptedUser),
        UserBackend::HttpChat { config, temperature, max_tokens } => Arc::new(LlmUser {
            backend: HttpChatClient::new(config.clone(), trace).invalid("simulated user backend")?,
            temperature: *temperature,
            max_tokens: *max_tokens,
        }),
    };
    let judge: Arc<dyn Judge> = match &cfg.judge {
        JudgeBackend::Utility(j) => Arc::new(j.clone()),
        JudgeBackend::HttpChat { config, max_transcript_tokens } => {
            let mut j = LlmJudge::new(HttpChatClient::new(config.clone(), trace).invalid("judge backend")?);
            if let Some(n) = max_transcript_tokens {
                j.max_transcript_tokens = *n;
            }
            Arc::new(j)
        }
    };
    ids.insert("user".into(), user.id());
    ids.insert("judge".into(), judge.id());
    let assistants: [Arc<dyn Assistant>; 4] = assistants.try_into().unwrap_or_else(|_| unreachable!("four models"));
    Ok((Agents { assistants, user, judge, exec: Exec::Parallel }, ids))
}

pub fn run(g: &Global, a: SimulateArgs) -> Result<(), CliError> {
    let condition: Condition = a.condition.parse().invalid("--condition")?;
    if condition.needs_human_trials() && a.human_trials.is_none() {
        return Err(CliError::invalid(format!("--condition {condition} requires --human-trials <FILE>")));
    }
    let cfg: SimulateConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SimulateConfig::default(),
    };
    let human: Option<Vec<Trial>> = a.human_trials.as_deref().map(trials_only).transpose()?;
    let participants: Vec<UserProfile> = if let Some(p) = &a.profiles {
        read_rows(p)?
    } else if !cfg.participants.is_empty() {
        cfg.participants.clone()
    } else if let Some(h) = &human {
        let ids: BTreeSet<&str> = h.iter().map(|t| t.participant.as_str()).collect();
        ids.into_iter().map(UserProfile::new).collect()
    } else {
        return Err(CliError::invalid("no participants: give --profiles, config participants or --human-trials"));
    };
    let domains = if !cfg.domains.is_empty() {
        cfg.domains.clone()
    } else if let Some(h) = &human {
        h.iter().map(|t| t.domain).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        Domain::ALL.to_vec()
    };
    let (agents, backend_ids) = build_agents(&cfg, g.trace)?;
    let mut plan = ExperimentPlan::new(participants, domains, condition, g.seed());
    plan.turns = match a.turns {
        Some(n) => TurnBudget::Fixed(n),
        None if human.is_some() && condition != Condition::SimJudgement => TurnBudget::MatchHuman,
        None => plan.turns,
    };
    plan.error_injection = cfg.error_injection.clone();
    if let Some(s) = &cfg.system_prompt {
        plan.system_prompt = s.clone();
    }
    plan.backend_ids = backend_ids;
    let out = run_experiment(&plan, &agents, human.as_deref()).map_err(|e| match e {
        ExperimentError::Config(_) => CliError::invalid(e),
        other => CliError::Runtime(other.into()),
    })?;
    for f in &out.manifest.failures {
        log::warn!("{f}");
    }
    let dir = out_dir(g.out.as_deref(), "simulate")?;
    write_file(&dir.join("trials.jsonl"), &prefsim::json::to_jsonl(&out.trials).runtime("serialize trials")?)?;
    write_file(&dir.join("manifest.json"), &prefsim::json::to_pretty(&out.manifest).runtime("serialize manifest")?)?;
    if out.trials.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!("every trial failed; see manifest.json")));
    }
    Ok(())
}
