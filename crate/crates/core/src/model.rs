//! Shared domain types: profiles, trials, conversations, rankings, and the
//! generation-error bookkeeping used by every analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Identifier used for the population-level (generic) user.
pub const GENERIC_USER: &str = "__generic__";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("no [[...]] ranking block could be parsed")]
    NoRankingFound,
    #[error("ranking repeats label {0}")]
    DuplicateLabel(ArmLabel),
    #[error("ranking is missing label {0}")]
    MissingLabel(ArmLabel),
    #[error("unknown arm label {0:?}")]
    UnknownLabel(String),
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("unknown rating scale {0:?}")]
    UnknownScale(String),
    #[error("unknown filtering strategy {0:?}")]
    UnknownStrategy(String),
    #[error("invalid trial: {0}")]
    InvalidTrial(String),
    #[error("invalid conversation: {0}")]
    InvalidConversation(String),
}

/// Anonymised arm identifier shown to the evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArmLabel {
    A,
    B,
    C,
    D,
}

impl ArmLabel {
    pub const ALL: [ArmLabel; 4] = [ArmLabel::A, ArmLabel::B, ArmLabel::C, ArmLabel::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_char(self) -> char {
        (b'A' + self as u8) as char
    }
}

impl fmt::Display for ArmLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for ArmLabel {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(ArmLabel::A),
            "B" | "b" => Ok(ArmLabel::B),
            "C" | "c" => Ok(ArmLabel::C),
            "D" | "d" => Ok(ArmLabel::D),
            other => Err(ModelError::UnknownLabel(other.to_string())),
        }
    }
}

impl Serialize for ArmLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ArmLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The four model identities compared in every trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelId {
    Base,
    Dpft,
    Ppft,
    Prompting,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Base, ModelId::Dpft, ModelId::Ppft, ModelId::Prompting];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Base => "Base",
            ModelId::Dpft => "DPFT",
            ModelId::Ppft => "PPFT",
            ModelId::Prompting => "Prompting",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(ModelId::Base),
            "dpft" => Ok(ModelId::Dpft),
            "ppft" => Ok(ModelId::Ppft),
            "prompting" | "prompt" => Ok(ModelId::Prompting),
            _ => Err(ModelError::UnknownModel(s.to_string())),
        }
    }
}

impl Serialize for ModelId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ModelId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Conversation domain. Closed set; unknown strings are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Unguided,
    Values,
    Controversy,
    Emotional,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Unguided, Domain::Values, Domain::Controversy, Domain::Emotional];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Unguided => "Unguided",
            Domain::Values => "Values",
            Domain::Controversy => "Controversy",
            Domain::Emotional => "Emotional",
        }
    }

    /// Topic name shown to participants.
    pub fn topic_name(self) -> &'static str {
        match self {
            Domain::Unguided => "Unguided",
            Domain::Values => "Values Guided",
            Domain::Controversy => "Controversy Guided",
            Domain::Emotional => "Emotional Wellbeing",
        }
    }

    /// Participant instruction for the domain.
    pub fn instruction(self) -> &'static str {
        match self {
            Domain::Unguided => "Ask, request or talk to the model about anything. It is up to you!",
            Domain::Values => {
                "Ask, request or talk to the model about something important to you or that represents \
                 your values. This could be related to work, religion, family and relationship, politics \
                 or culture."
            }
            Domain::Controversy => {
                "Ask, request or talk to the model about something controversial or where people would \
                 disagree in your community, culture or country."
            }
            Domain::Emotional => {
                "Ask, request or talk to the model about your emotional wellbeing. This could include \
                 discussing your feelings, seeking advice on managing stress, or sharing positive \
                 experiences."
            }
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "unguided" | "unguidedchat" => Ok(Domain::Unguided),
            "values" | "valuesguided" | "valueschat" => Ok(Domain::Values),
            "controversy" | "controversyguided" | "controversychat" => Ok(Domain::Controversy),
            "emotional" | "emotionalwellbeing" | "emotchat" | "emotionalchat" => Ok(Domain::Emotional),
            _ => Err(ModelError::UnknownDomain(s.to_string())),
        }
    }
}

impl Serialize for Domain {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Domain {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Cardinal rating scales collected per arm (0-100).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingScale {
    Preference,
    Engagingness,
    Provenance,
}

impl FromStr for RatingScale {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "preference" => Ok(RatingScale::Preference),
            "engagingness" => Ok(RatingScale::Engagingness),
            "provenance" => Ok(RatingScale::Provenance),
            _ => Err(ModelError::UnknownScale(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    #[serde(default)]
    pub demographics: String,
    #[serde(default)]
    pub system_string: String,
    #[serde(default)]
    pub self_description: String,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self { user_id: user_id.into(), ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub turn_index: u32,
}

/// One arm of a trial: the conversation with a single model.
///
/// `turn_index` numbers messages from 0. `error_turns` holds assistant
/// ordinals: 1 is the first assistant reply, 2 the second, and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub model: ModelId,
    pub label: ArmLabel,
    pub position: u8,
    #[serde(default)]
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub error_turns: BTreeSet<u32>,
}

impl Conversation {
    pub fn new(model: ModelId, label: ArmLabel, position: u8) -> Self {
        Self { model, label, position, turns: Vec::new(), error_turns: BTreeSet::new() }
    }

    /// Appends a turn with the next message index.
    pub fn push(&mut self, role: Role, text: impl Into<String>) {
        let turn_index = self.turns.last().map_or(0, |t| t.turn_index + 1);
        self.turns.push(Turn { role, text: text.into(), turn_index });
    }

    pub fn assistant_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.role == Role::Assistant)
    }

    pub fn user_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.role == Role::User)
    }

    pub fn n_assistant_turns(&self) -> usize {
        self.assistant_turns().count()
    }

    pub fn n_user_turns(&self) -> usize {
        self.user_turns().count()
    }

    pub fn first_user_message(&self) -> Option<&str> {
        self.user_turns().next().map(|t| t.text.as_str())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.position > 3 {
            return Err(ModelError::InvalidConversation(format!("position {} outside 0-3", self.position)));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if turn.role != expected {
                return Err(ModelError::InvalidConversation(format!(
                    "turn {i} has role {:?}; roles must alternate starting with user",
                    turn.role
                )));
            }
            if i > 0 && turn.turn_index <= self.turns[i - 1].turn_index {
                return Err(ModelError::InvalidConversation(format!(
                    "turn_index not strictly increasing at turn {i}"
                )));
            }
        }
        let n_assistant = self.n_assistant_turns() as u32;
        if let Some(bad) = self.error_turns.iter().find(|&&t| t == 0 || t > n_assistant) {
            return Err(ModelError::InvalidConversation(format!(
                "error turn {bad} is not an assistant turn (1..={n_assistant})"
            )));
        }
        Ok(())
    }
}

/// A strict best-to-worst ordering of the four arm labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ranking([ArmLabel; 4]);

impl Ranking {
    pub fn new(order: [ArmLabel; 4]) -> Result<Self, ModelError> {
        Self::from_slice(&order)
    }

    /// Validates that `labels` is a permutation of A-D.
    pub fn from_slice(labels: &[ArmLabel]) -> Result<Self, ModelError> {
        let mut seen = [false; 4];
        for &l in labels {
            if seen[l.index()] {
                return Err(ModelError::DuplicateLabel(l));
            }
            seen[l.index()] = true;
        }
        if let Some(missing) = ArmLabel::ALL.iter().find(|l| !seen[l.index()]) {
            return Err(ModelError::MissingLabel(*missing));
        }
        let mut order = [ArmLabel::A; 4];
        order.copy_from_slice(labels);
        Ok(Ranking(order))
    }

    pub fn labels(&self) -> &[ArmLabel; 4] {
        &self.0
    }

    pub fn best(&self) -> ArmLabel {
        self.0[0]
    }

    /// 0-based rank of a label (0 = best).
    pub fn rank_of(&self, label: ArmLabel) -> usize {
        self.0.iter().position(|&l| l == label).expect("ranking is a permutation")
    }

    pub fn all_permutations() -> Vec<Ranking> {
        let mut out = Vec::with_capacity(24);
        for a in ArmLabel::ALL {
            for b in ArmLabel::ALL {
                for c in ArmLabel::ALL {
                    for d in ArmLabel::ALL {
                        if let Ok(r) = Ranking::new([a, b, c, d]) {
                            out.push(r);
                        }
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Ranking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_ranking(self))
    }
}

impl Serialize for Ranking {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ranking {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let labels = Vec::<ArmLabel>::deserialize(d)?;
        if labels.len() != 4 {
            return Err(serde::de::Error::custom(format!(
                "ranking must be a permutation of A-D, got {} labels",
                labels.len()
            )));
        }
        Ranking::from_slice(&labels).map_err(serde::de::Error::custom)
    }
}

/// Renders a ranking in the bracketed answer format, e.g. `[[B, D, A, C]]`.
pub fn format_ranking(r: &Ranking) -> String {
    let inner: Vec<String> = r.0.iter().map(|l| l.to_string()).collect();
    format!("[[{}]]", inner.join(", "))
}

fn ranking_block_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\[([^\[\]]*)\]\]").unwrap())
}

/// Extracts the last well-formed `[[X, Y, Z, W]]` permutation from free text.
///
/// Blocks whose items are not all single labels A-D are ignored. If some
/// block consists of labels but is not a permutation and no later or earlier
/// block is, the error for the last such block is returned.
pub fn parse_ranking(text: &str) -> Result<Ranking, ModelError> {
    let mut last_err = None;
    for cap in ranking_block_re().captures_iter(text).collect::<Vec<_>>().into_iter().rev() {
        let items: Result<Vec<ArmLabel>, _> = cap[1].split(',').map(|s| s.parse::<ArmLabel>()).collect();
        let Ok(items) = items else { continue };
        match Ranking::from_slice(&items) {
            Ok(r) if items.len() == 4 => return Ok(r),
            Ok(_) => unreachable!("permutation of four labels has length four"),
            Err(e) => {
                if last_err.is_none() {
                    last_err = Some(e);
                }
            }
        }
    }
    Err(last_err.unwrap_or(ModelError::NoRankingFound))
}

/// Scores for the four arms, indexed by `ArmLabel::index()`.
pub type ArmScores = [f64; 4];

/// Sorts arms by descending score. Ties are broken alphabetically by label
/// and flagged.
pub fn ratings_to_rank(scores: &ArmScores) -> (Ranking, bool) {
    let mut order = ArmLabel::ALL;
    // stable sort keeps alphabetical order among equal scores
    order.sort_by(|a, b| scores[b.index()].total_cmp(&scores[a.index()]));
    let mut tie = false;
    for i in 0..4 {
        for j in i + 1..4 {
            if scores[i] == scores[j] {
                tie = true;
            }
        }
    }
    (Ranking(order), tie)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCovariates {
    /// Error on the first assistant reply.
    pub first_turn: bool,
    /// Error on a later reply with a clean first reply.
    pub subsequent: bool,
}

impl ErrorCovariates {
    pub fn any(&self) -> bool {
        self.first_turn || self.subsequent
    }
}

pub fn error_covariates(conv: &Conversation) -> ErrorCovariates {
    let first_turn = conv.error_turns.contains(&1);
    ErrorCovariates { first_turn, subsequent: !first_turn && !conv.error_turns.is_empty() }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeRecord {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub explanation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// One participant x domain block with four arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub participant: String,
    pub domain: Domain,
    pub arms: Vec<Conversation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opening_choice: Option<ArmLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Ranking>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ratings: BTreeMap<RatingScale, BTreeMap<ArmLabel, f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub wtp: BTreeMap<ArmLabel, f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeRecord>,
}

impl Trial {
    pub fn id(&self) -> String {
        format!("{}/{}", self.participant, self.domain)
    }

    pub fn arm(&self, label: ArmLabel) -> Option<&Conversation> {
        self.arms.iter().find(|a| a.label == label)
    }

    pub fn arm_for_model(&self, model: ModelId) -> Option<&Conversation> {
        self.arms.iter().find(|a| a.model == model)
    }

    pub fn model_of(&self, label: ArmLabel) -> Option<ModelId> {
        self.arm(label).map(|a| a.model)
    }

    /// The ranking translated from labels to model identities.
    pub fn model_ranking(&self) -> Option<[ModelId; 4]> {
        let r = self.ranking?;
        let mut out = [ModelId::Base; 4];
        for (slot, label) in r.labels().iter().enumerate() {
            out[slot] = self.model_of(*label)?;
        }
        Some(out)
    }

    /// Scores on one rating scale, if all four arms were rated.
    pub fn scores(&self, scale: RatingScale) -> Option<ArmScores> {
        let m = self.ratings.get(&scale)?;
        let mut out = [0.0; 4];
        for l in ArmLabel::ALL {
            out[l.index()] = *m.get(&l)?;
        }
        Some(out)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidTrial(m));
        if self.participant.is_empty() {
            return bad("participant id is empty".into());
        }
        if self.arms.len() != 4 {
            return bad(format!("expected 4 arms, found {}", self.arms.len()));
        }
        let labels: BTreeSet<_> = self.arms.iter().map(|a| a.label).collect();
        let positions: BTreeSet<_> = self.arms.iter().map(|a| a.position).collect();
        let models: BTreeSet<_> = self.arms.iter().map(|a| a.model).collect();
        if labels.len() != 4 {
            return bad("arm labels are not distinct".into());
        }
        if positions.len() != 4 || positions.iter().any(|&p| p > 3) {
            return bad("arm positions must be distinct values 0-3".into());
        }
        if models.len() != 4 {
            return bad("arm models are not distinct".into());
        }
        for arm in &self.arms {
            arm.validate().map_err(|e| ModelError::InvalidTrial(format!("arm {}: {e}", arm.label)))?;
        }
        for (scale, m) in &self.ratings {
            for (label, v) in m {
                if !(0.0..=100.0).contains(v) {
                    return bad(format!("{scale:?} rating {v} for {label} outside [0,100]"));
                }
            }
        }
        for (label, v) in &self.wtp {
            if !(0.0..=10.0).contains(v) {
                return bad(format!("bid {v} for {label} outside [0,10]"));
            }
        }
        Ok(())
    }

    pub fn covariates(&self, label: ArmLabel) -> ErrorCovariates {
        self.arm(label).map(error_covariates).unwrap_or_default()
    }

    pub fn has_any_error(&self) -> bool {
        self.arms.iter().any(|a| !a.error_turns.is_empty())
    }

    pub fn all_first_turn_errors(&self) -> bool {
        !self.arms.is_empty() && self.arms.iter().all(|a| error_covariates(a).first_turn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStrategy {
    Full,
    BinaryControl,
    SplitControl,
    RowDeletion,
    TrialDeletion,
    UserDeletion,
}

impl FilterStrategy {
    pub const ALL: [FilterStrategy; 6] = [
        FilterStrategy::Full,
        FilterStrategy::BinaryControl,
        FilterStrategy::SplitControl,
        FilterStrategy::RowDeletion,
        FilterStrategy::TrialDeletion,
        FilterStrategy::UserDeletion,
    ];

    pub fn covariate_plan(self) -> CovariatePlan {
        match self {
            FilterStrategy::BinaryControl => CovariatePlan::AnyError,
            FilterStrategy::SplitControl => CovariatePlan::Split,
            _ => CovariatePlan::None,
        }
    }
}

impl FromStr for FilterStrategy {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(Self::Full),
            "binary_control" => Ok(Self::BinaryControl),
            "split_control" => Ok(Self::SplitControl),
            "row_deletion" => Ok(Self::RowDeletion),
            "trial_deletion" => Ok(Self::TrialDeletion),
            "user_deletion" => Ok(Self::UserDeletion),
            _ => Err(ModelError::UnknownStrategy(s.to_string())),
        }
    }
}

/// Which error covariates the analysis layer must include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariatePlan {
    None,
    AnyError,
    Split,
}

impl CovariatePlan {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            CovariatePlan::None => &[],
            CovariatePlan::AnyError => &["E_any"],
            CovariatePlan::Split => &["E1", "E2"],
        }
    }

    pub fn values(self, cov: ErrorCovariates) -> Vec<f64> {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        match self {
            CovariatePlan::None => vec![],
            CovariatePlan::AnyError => vec![b(cov.any())],
            CovariatePlan::Split => vec![b(cov.first_turn), b(cov.subsequent)],
        }
    }
}

/// A trial retained by a filter, with any arms removed from analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredTrial {
    pub trial: Trial,
    pub excluded_arms: BTreeSet<ArmLabel>,
}

impl FilteredTrial {
    pub fn included_arms(&self) -> impl Iterator<Item = &Conversation> {
        self.arms_iter().filter(|a| !self.excluded_arms.contains(&a.label))
    }

    fn arms_iter(&self) -> impl Iterator<Item = &Conversation> {
        self.trial.arms.iter()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropCounts {
    pub all_first_turn_errors: usize,
    pub rows_removed: usize,
    pub trials_with_errors: usize,
    pub error_affected_users: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub strategy: FilterStrategy,
    pub trials: Vec<FilteredTrial>,
    pub plan: CovariatePlan,
    pub drops: DropCounts,
}

/// Applies an error-handling strategy.
///
/// Trials where every arm failed on its first reply are always dropped.
pub fn filter_trials(trials: &[Trial], strategy: FilterStrategy) -> FilterOutcome {
    let mut drops = DropCounts::default();
    let affected_users: BTreeSet<&str> =
        trials.iter().filter(|t| t.has_any_error()).map(|t| t.participant.as_str()).collect();
    let mut kept = Vec::new();
    for trial in trials {
        if trial.all_first_turn_errors() {
            drops.all_first_turn_errors += 1;
            continue;
        }
        match strategy {
            FilterStrategy::TrialDeletion if trial.has_any_error() => {
                drops.trials_with_errors += 1;
                continue;
            }
            FilterStrategy::UserDeletion if affected_users.contains(trial.participant.as_str()) => {
                continue;
            }
            _ => {}
        }
        let mut excluded = BTreeSet::new();
        if strategy == FilterStrategy::RowDeletion {
            for arm in &trial.arms {
                if !arm.error_turns.is_empty() {
                    excluded.insert(arm.label);
                }
            }
            drops.rows_removed += excluded.len();
            // fewer than two alternatives leaves no choice to analyse
            if trial.arms.len() - excluded.len() < 2 {
                continue;
            }
        }
        kept.push(FilteredTrial { trial: trial.clone(), excluded_arms: excluded });
    }
    if strategy == FilterStrategy::UserDeletion {
        drops.error_affected_users = affected_users.len();
    }
    FilterOutcome { strategy, trials: kept, plan: strategy.covariate_plan(), drops }
}
