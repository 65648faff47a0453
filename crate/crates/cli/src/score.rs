use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use prefsim::agents::{HttpChatClient, HttpChatConfig};
use prefsim::exec::Exec;
use prefsim::report::{Report, Table};
use prefsim::traits::{
    floor_percentage, score_conversation, score_turns_sliding, scoring_icc, Dimension, Grader, LengthStubGrader,
    LlmGrader, ScoreMode, TraitError, TraitScore,
};
use serde_json::json;

use crate::error::{CliError, Classify};
use crate::io::{emit, read_json, trials_only, write_file};
use crate::Global;

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Trials (JSONL) whose arms are scored.
    #[arg(long)]
    trials: PathBuf,
    /// Comma-separated dimensions; all twelve when absent.
    #[arg(long, value_delimiter = ',')]
    dimensions: Vec<String>,
    /// first_turn, full or sliding.
    #[arg(long, default_value = "full")]
    mode: String,
    /// length_stub or http.
    #[arg(long, default_value = "length_stub")]
    grader: String,
    /// HTTP grader settings (JSON with endpoint, model, ...), plus optional `rubrics`.
    #[arg(long)]
    grader_config: Option<PathBuf>,
    /// Score everything this many times; with more than one, report ICC(2,1) per dimension.
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Write a summary report (floor percentages, reliability) here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(serde::Deserialize)]
struct GraderConfig {
    #[serde(flatten)]
    http: HttpChatConfig,
    #[serde(default)]
    rubrics: BTreeMap<Dimension, String>,
}

fn score_all(grader: &dyn Grader, trials: &[prefsim::model::Trial], dims: &[Dimension], mode: ScoreMode) -> Result<(Vec<TraitScore>, usize), CliError> {
    let mut rows = Vec::new();
    let mut skipped = 0;
    for t in trials {
        for arm in &t.arms {
            let id = format!("{}#{}", t.id(), arm.label);
            if mode == ScoreMode::Sliding {
                rows.extend(score_turns_sliding(grader, &id, arm, None, dims, Exec::Parallel).runtime(&format!("scoring {id}"))?);
                continue;
            }
            for &d in dims {
                match score_conversation(grader, &id, arm, None, d, mode) {
                    Ok(s) => rows.push(s),
                    Err(TraitError::NoTurns(_)) => skipped += 1,
                    Err(e) => return Err(CliError::Runtime(anyhow::anyhow!("scoring {id} on {d}: {e}"))),
                }
            }
        }
    }
    Ok((rows, skipped))
}

pub fn run(g: &Global, a: ScoreArgs) -> Result<(), CliError> {
    let mode: ScoreMode = a.mode.parse().invalid("--mode")?;
    let dims: Vec<Dimension> = if a.dimensions.is_empty() {
        Dimension::ALL.to_vec()
    } else {
        a.dimensions.iter().map(|d| d.parse()).collect::<Result<_, _>>().invalid("--dimensions")?
    };
    if a.replicates == 0 {
        return Err(CliError::invalid("--replicates must be >= 1"));
    }
    let grader: Box<dyn Grader> = match a.grader.as_str() {
        "length_stub" => Box::new(LengthStubGrader),
        "http" => {
            let path = a.grader_config.as_ref().ok_or_else(|| CliError::invalid("--grader http needs --grader-config"))?;
            let cfg: GraderConfig = read_json(path)?;
            let mut g = LlmGrader::new(HttpChatClient::new(cfg.http, g.trace).invalid("grader backend")?);
            g.rubrics = cfg.rubrics;
            Box::new(g)
        }
        other => return Err(CliError::invalid(format!("unknown --grader {other:?}"))),
    };
    let trials = trials_only(&a.trials)?;
    let mut runs = Vec::new();
    let mut skipped = 0;
    for _ in 0..a.replicates {
        let (rows, s) = score_all(grader.as_ref(), &trials, &dims, mode)?;
        skipped = s;
        runs.push(rows);
    }
    emit(g.out.as_deref(), &prefsim::json::to_jsonl(&runs[0]).runtime("serialize scores")?)?;
    if let Some(path) = &a.summary {
        let mut report = Report::new("score")
            .convention("grader", grader.id())
            .convention("mode", a.mode.clone())
            .convention("refusal", "1-3 scale; flagged when >= 2")
            .convention("sliding_window", "full prefix up to and including the scored turn");
        let mut t = Table::new("traits", &["dimension", "n", "mean", "floor_pct", "icc_2_1"]);
        for d in &dims {
            let of = |run: &[TraitScore]| run.iter().filter(|s| s.dimension == *d).cloned().collect::<Vec<_>>();
            let rows = of(&runs[0]);
            if rows.is_empty() {
                continue;
            }
            let mean = rows.iter().map(|s| s.value).sum::<f64>() / rows.len() as f64;
            let icc = if runs.len() > 1 {
                let per: Vec<Vec<TraitScore>> = runs.iter().map(|r| of(r)).collect();
                scoring_icc(&per).map_or(serde_json::Value::Null, |v| json!(v))
            } else {
                serde_json::Value::Null
            };
            t.push(vec![d.as_str().into(), rows.len().into(), json!(mean), json!(floor_percentage(&rows)), icc]);
        }
        report.tables.push(t);
        if skipped > 0 {
            report.notes.push(format!("{skipped} conversation x dimension combinations had no turn to score"));
        }
        write_file(path, &report.to_json())?;
    }
    Ok(())
}
