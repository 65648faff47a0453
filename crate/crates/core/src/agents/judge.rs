//! Judges that rank the four arms of a trial.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompts::{render_user_prompt, PromptKind, DEFAULT_TRANSCRIPT_TOKENS, REASK_SUFFIX};
use super::{AgentError, ChatBackend, ChatMessage, GenerationError, SamplingParams};
use crate::model::{parse_ranking, ArmLabel, Conversation, Domain, ModelError, ModelId, Ranking, UserProfile};
use crate::seed::stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JudgeError {
    #[error("judge reply had no usable ranking: {0}")]
    Ranking(#[from] ModelError),
    #[error("judge backend failed: {0}")]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Request(#[from] AgentError),
}

pub struct JudgeRequest<'a> {
    pub profile: &'a UserProfile,
    pub domain: Domain,
    pub arms: &'a [Conversation],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutput {
    pub ranking: Ranking,
    pub explanation: String,
}

pub trait Judge: Send + Sync {
    fn id(&self) -> String;
    fn rank(&self, request: &JudgeRequest<'_>, seed: u64) -> Result<JudgeOutput, JudgeError>;
}

/// Pure utility of one arm's transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UtilityFn {
    /// Characters across assistant turns.
    ResponseLength,
    /// Occurrences of `marker` across assistant turns.
    MarkerCount { marker: String },
    /// A fixed utility per model identity.
    ModelScores { scores: BTreeMap<ModelId, f64> },
}

impl UtilityFn {
    pub fn eval(&self, arm: &Conversation) -> f64 {
        match self {
            UtilityFn::ResponseLength => arm.assistant_turns().map(|t| t.text.chars().count()).sum::<usize>() as f64,
            UtilityFn::MarkerCount { marker } if !marker.is_empty() => {
                arm.assistant_turns().map(|t| t.text.matches(marker.as_str()).count()).sum::<usize>() as f64
            }
            UtilityFn::MarkerCount { .. } => 0.0,
            UtilityFn::ModelScores { scores } => scores.get(&arm.model).copied().unwrap_or(0.0),
        }
    }
}

/// Ranks by utility plus a per-display-position bonus plus Gumbel noise.
///
/// With Gumbel noise of scale `s`, the top pick follows a conditional logit
/// in `(utility + bias) / s`. Ties fall back to label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityJudge {
    pub utility: UtilityFn,
    #[serde(default)]
    pub position_bias: [f64; 4],
    #[serde(default)]
    pub noise_scale: f64,
}

impl UtilityJudge {
    pub fn new(utility: UtilityFn) -> Self {
        Self { utility, position_bias: [0.0; 4], noise_scale: 0.0 }
    }

    pub fn scores(&self, arms: &[Conversation], seed: u64) -> BTreeMap<ArmLabel, f64> {
        let mut rng = stream(seed, &["judge-noise"]);
        let mut sorted: Vec<&Conversation> = arms.iter().collect();
        sorted.sort_by_key(|a| a.label);
        sorted
            .into_iter()
            .map(|a| {
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                let noise = if self.noise_scale > 0.0 { -self.noise_scale * (-u.ln()).ln() } else { 0.0 };
                let bias = self.position_bias.get(a.position as usize).copied().unwrap_or(0.0);
                (a.label, self.utility.eval(a) + bias + noise)
            })
            .collect()
    }
}

impl Judge for UtilityJudge {
    fn id(&self) -> String {
        "utility_judge".into()
    }

    fn rank(&self, request: &JudgeRequest<'_>, seed: u64) -> Result<JudgeOutput, JudgeError> {
        let labels: std::collections::BTreeSet<_> = request.arms.iter().map(|a| a.label).collect();
        if request.arms.len() != 4 || labels.len() != 4 {
            return Err(AgentError::MissingTranscripts(request.arms.len()).into());
        }
        let scores = self.scores(request.arms, seed);
        let mut order: Vec<ArmLabel> = scores.keys().copied().collect();
        order.sort_by(|a, b| scores[b].total_cmp(&scores[a]).then(a.cmp(b)));
        let ranking = Ranking::from_slice(&order)?;
        let explanation = order.iter().map(|l| format!("{l}={:.4}", scores[l])).collect::<Vec<_>>().join(", ");
        Ok(JudgeOutput { ranking, explanation: format!("utility scores: {explanation}") })
    }
}

/// Simulated-user judge over a chat backend. A reply without a valid
/// ranking gets exactly one re-ask.
pub struct LlmJudge<B: ChatBackend> {
    pub backend: B,
    pub params: SamplingParams,
    pub max_transcript_tokens: usize,
}

impl<B: ChatBackend> LlmJudge<B> {
    pub fn new(backend: B) -> Self {
        Self {
            backend,
            params: SamplingParams { temperature: 0.1, max_tokens: 4096 },
            max_transcript_tokens: DEFAULT_TRANSCRIPT_TOKENS,
        }
    }
}

impl<B: ChatBackend> Judge for LlmJudge<B> {
    fn id(&self) -> String {
        format!("llm_judge:{}", self.backend.id())
    }

    fn rank(&self, request: &JudgeRequest<'_>, _seed: u64) -> Result<JudgeOutput, JudgeError> {
        let prompt = render_user_prompt(
            request.profile,
            PromptKind::Judgement,
            request.domain,
            Some(request.arms),
            None,
            &[],
            self.max_transcript_tokens,
        )?;
        let mut msgs = vec![ChatMessage::new("system", prompt.system), ChatMessage::new("user", prompt.user)];
        let first = self.backend.complete(&msgs, &self.params)?;
        if let Ok(ranking) = parse_ranking(&first) {
            return Ok(JudgeOutput { ranking, explanation: first });
        }
        msgs.push(ChatMessage::new("assistant", first.clone()));
        msgs.push(ChatMessage::new("user", REASK_SUFFIX));
        let second = self.backend.complete(&msgs, &self.params)?;
        let ranking = parse_ranking(&second)?;
        Ok(JudgeOutput { ranking, explanation: format!("{first}\n{second}") })
    }
}
