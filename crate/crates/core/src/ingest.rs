//! Trial dataset ingestion with per-line diagnostics.
//!
//! Two row layouts are accepted. Native rows are serialized [`Trial`]s
//! (they have an `arms` key). External rows use the flatter layout below,
//! as found in exported study data:
//!
//! ```json
//! {"user_id": "u1", "domain": "Values guided", "seed": 0,
//!  "conversations": [{"model": "PPFT", "label": "A", "position": 0,
//!                     "messages": [{"role": "user", "content": "..."},
//!                                  {"role": "model", "content": "..."}],
//!                     "error_turns": [2]}, ...],
//!  "ranking": "B > D > A > C", "opening_choice": "A",
//!  "ratings": {"preference": {"A": 71.0, ...}}, "wtp": {"A": 2.5, ...}}
//! ```
//!
//! Malformed JSON aborts ingestion. Anything else that breaks a trial
//! invariant is reported against its line and the trial is dropped.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    filter_trials, ArmLabel, Conversation, DropCounts, FilterStrategy, ModelError, ModelId, RatingScale, Role, Trial,
};

/// Bids are entered on a slider with this increment.
pub const BID_INCREMENT: f64 = 0.01;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: malformed JSON: {message}")]
    MalformedJson { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub lines: usize,
    pub accepted: usize,
    pub dropped: usize,
    pub diagnostics: Vec<Diagnostic>,
    pub arms_with_first_turn_error: usize,
    pub arms_with_subsequent_error: usize,
    pub drops_by_strategy: BTreeMap<String, DropCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trials: Vec<Trial>,
    pub report: IngestReport,
}

#[derive(Debug, Deserialize)]
struct ExternalMessage {
    role: String,
    content: String,
}

#[derive(Debug, Deserialize)]
struct ExternalArm {
    model: String,
    label: String,
    position: u8,
    #[serde(default)]
    messages: Vec<ExternalMessage>,
    #[serde(default)]
    error_turns: BTreeSet<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RankingField {
    List(Vec<String>),
    Text(String),
}

#[derive(Debug, Deserialize)]
struct ExternalTrial {
    user_id: String,
    domain: String,
    #[serde(default)]
    seed: u64,
    conversations: Vec<ExternalArm>,
    #[serde(default)]
    ranking: Option<RankingField>,
    #[serde(default)]
    opening_choice: Option<String>,
    #[serde(default)]
    ratings: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    wtp: BTreeMap<String, f64>,
}

fn parse_role(s: &str) -> Result<Role, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "user" | "human" => Ok(Role::User),
        "assistant" | "model" | "ai" => Ok(Role::Assistant),
        other => Err(format!("unknown message role {other:?}")),
    }
}

fn ranking_labels(field: RankingField) -> Vec<String> {
    match field {
        RankingField::List(v) => v,
        RankingField::Text(t) => t
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect(),
    }
}

fn label(s: &str) -> Result<ArmLabel, String> {
    s.parse().map_err(|e: ModelError| e.to_string())
}

fn convert_external(ext: ExternalTrial) -> Result<Trial, String> {
    let domain = ext.domain.parse().map_err(|e: ModelError| e.to_string())?;
    let mut arms = Vec::new();
    for a in ext.conversations {
        let model: ModelId = a.model.parse().map_err(|e: ModelError| e.to_string())?;
        let mut c = Conversation::new(model, label(&a.label)?, a.position);
        for m in a.messages {
            c.push(parse_role(&m.role)?, m.content);
        }
        c.error_turns = a.error_turns;
        arms.push(c);
    }
    let ranking = match ext.ranking {
        None => None,
        Some(f) => {
            let labels = ranking_labels(f).iter().map(|s| label(s)).collect::<Result<Vec<_>, _>>()?;
            if labels.len() != 4 {
                return Err(format!("ranking must be a permutation of A-D, got {} labels", labels.len()));
            }
            Some(crate::model::Ranking::from_slice(&labels).map_err(|e| e.to_string())?)
        }
    };
    let mut ratings = BTreeMap::new();
    for (scale, m) in ext.ratings {
        let scale: RatingScale = scale.parse().map_err(|e: ModelError| e.to_string())?;
        let m = m.into_iter().map(|(l, v)| Ok((label(&l)?, v))).collect::<Result<_, String>>()?;
        ratings.insert(scale, m);
    }
    let wtp = ext.wtp.into_iter().map(|(l, v)| Ok((label(&l)?, v))).collect::<Result<_, String>>()?;
    Ok(Trial {
        participant: ext.user_id,
        domain,
        arms,
        opening_choice: ext.opening_choice.as_deref().map(label).transpose()?,
        ranking,
        ratings,
        wtp,
        seed: ext.seed,
        judge: None,
    })
}

fn check_bid_granularity(trial: &Trial) -> Result<(), String> {
    for (l, v) in &trial.wtp {
        let cents = v / BID_INCREMENT;
        if (cents - cents.round()).abs() > 1e-6 {
            return Err(format!("bid {v} for {l} is not a multiple of ${BID_INCREMENT}"));
        }
    }
    Ok(())
}

/// Parses a JSONL trial dataset held in memory.
pub fn ingest_str(text: &str) -> Result<Dataset, IngestError> {
    let mut report = IngestReport::default();
    let mut trials = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| IngestError::MalformedJson { line, message: e.to_string() })?;
        let parsed = if value.get("arms").is_some() {
            serde_json::from_value::<Trial>(value).map_err(|e| e.to_string())
        } else {
            serde_json::from_value::<ExternalTrial>(value).map_err(|e| e.to_string()).and_then(convert_external)
        };
        let checked = parsed.and_then(|t| {
            t.validate().map_err(|e| e.to_string())?;
            check_bid_granularity(&t)?;
            if !seen.insert(t.id()) {
                return Err(format!("duplicate trial {}", t.id()));
            }
            Ok(t)
        });
        match checked {
            Ok(t) => trials.push(t),
            Err(message) => {
                report.dropped += 1;
                report.diagnostics.push(Diagnostic { line, message });
            }
        }
    }
    report.accepted = trials.len();
    for t in &trials {
        for a in &t.arms {
            let c = crate::model::error_covariates(a);
            report.arms_with_first_turn_error += usize::from(c.first_turn);
            report.arms_with_subsequent_error += usize::from(c.subsequent);
        }
    }
    for s in FilterStrategy::ALL {
        let name = serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        report.drops_by_strategy.insert(name, filter_trials(&trials, s).drops);
    }
    Ok(Dataset { trials, report })
}

/// Reads and validates a JSONL trial dataset.
pub fn ingest_prism_like(path: &std::path::Path) -> Result<Dataset, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    ingest_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::json::to_line;
    use crate::model::Ranking;

    fn trial(p: &str) -> Trial {
        let arms = ModelId::ALL
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let mut c = Conversation::new(m, ArmLabel::ALL[i], (3 - i) as u8);
                c.push(Role::User, "hello");
                c.push(Role::Assistant, "hi");
                c
            })
            .collect();
        Trial {
            participant: p.into(),
            domain: crate::model::Domain::Values,
            arms,
            opening_choice: Some(ArmLabel::B),
            ranking: Some(Ranking::new([ArmLabel::B, ArmLabel::A, ArmLabel::D, ArmLabel::C]).unwrap()),
            ratings: BTreeMap::new(),
            wtp: [(ArmLabel::A, 2.5), (ArmLabel::B, 0.01)].into(),
            seed: 0,
            judge: None,
        }
    }

    #[test]
    fn well_formed_file_has_no_diagnostics() {
        let text = [trial("u1"), trial("u2")].iter().map(|t| to_line(t).unwrap()).collect::<Vec<_>>().join("\n");
        let d = ingest_str(&text).unwrap();
        assert!(d.report.diagnostics.is_empty());
        assert_eq!(d.trials, vec![trial("u1"), trial("u2")]);
        assert_eq!(d.report.drops_by_strategy.len(), 6);
    }

    #[test]
    fn missing_arm_is_dropped_with_line() {
        let mut bad = trial("u2");
        bad.arms.pop();
        let text = format!("{}\n\n{}\n", to_line(&trial("u1")).unwrap(), to_line(&bad).unwrap());
        let d = ingest_str(&text).unwrap();
        assert_eq!(d.trials.len(), 1);
        assert_eq!(d.report.diagnostics.len(), 1);
        assert_eq!(d.report.diagnostics[0].line, 3);
        assert!(d.report.diagnostics[0].message.contains("expected 4 arms"));
    }

    #[test]
    fn five_label_ranking_cites_permutation() {
        let line = to_line(&trial("u1")).unwrap().replace(r#""ranking":["B","A","D","C"]"#, r#""ranking":["B","A","D","C","A"]"#);
        let d = ingest_str(&line).unwrap();
        assert_eq!(d.trials.len(), 0);
        assert!(d.report.diagnostics[0].message.contains("permutation"), "{:?}", d.report.diagnostics);
    }

    #[test]
    fn malformed_json_is_fatal() {
        let text = format!("{}\n{{\"arms\": [", to_line(&trial("u1")).unwrap());
        assert!(matches!(ingest_str(&text), Err(IngestError::MalformedJson { line: 2, .. })));
    }

    #[test]
    fn bid_granularity_and_duplicates() {
        let mut t = trial("u1");
        t.wtp.insert(ArmLabel::C, 1.234);
        let text = format!("{}\n{}\n{}", to_line(&t).unwrap(), to_line(&trial("u2")).unwrap(), to_line(&trial("u2")).unwrap());
        let d = ingest_str(&text).unwrap();
        assert_eq!(d.trials.len(), 1);
        let lines: Vec<usize> = d.report.diagnostics.iter().map(|x| x.line).collect();
        assert_eq!(lines, vec![1, 3]);
    }

    #[test]
    fn external_layout_normalizes() {
        let conv = |m: &str, l: &str, p: u8| {
            format!(
                r#"{{"model":"{m}","label":"{l}","position":{p},"messages":[{{"role":"human","content":"q"}},{{"role":"model","content":"a"}}],"error_turns":[1]}}"#
            )
        };
        let line = format!(
            r#"{{"user_id":"u9","domain":"Emotional wellbeing","conversations":[{},{},{},{}],"ranking":"C > A > D > B","wtp":{{"A":3.0}}}}"#,
            conv("base", "A", 2),
            conv("dpft", "B", 0),
            conv("ppft", "C", 1),
            conv("prompt", "D", 3)
        );
        let d = ingest_str(&line).unwrap();
        assert!(d.report.diagnostics.is_empty(), "{:?}", d.report.diagnostics);
        let t = &d.trials[0];
        assert_eq!(t.domain, crate::model::Domain::Emotional);
        assert_eq!(t.model_ranking().unwrap()[0], ModelId::Ppft);
        assert_eq!(d.report.arms_with_first_turn_error, 4);
        assert_eq!(d.report.drops_by_strategy["trial_deletion"].all_first_turn_errors, 1);
    }
}
