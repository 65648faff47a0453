//! JSON reports and their plain-text rendering.
//!
//! Every command writes a [`Report`] as JSON. Text tables are produced by
//! [`render_text`] from that JSON alone, so the two can never disagree.

use std::collections::BTreeMap;

use comfy_table::{presets::ASCII_MARKDOWN, Table as TextTable};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::choice::{FitResult, PlackettLuceFit};
use crate::metrics::MetricRow;
use crate::stats::{BOWKER_CONVENTION, KS_CONVENTION, WILCOXON_CONVENTION};

pub const REPORT_FORMAT: &str = "prefsim-report/1";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a {REPORT_FORMAT} document")]
    Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Self { title: title.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub command: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub config_digest: Option<String>,
    pub conventions: BTreeMap<String, String>,
    pub tables: Vec<Table>,
    #[serde(default)]
    pub notes: Vec<String>,
    /// Command-specific machine-readable payload.
    #[serde(default)]
    pub data: Value,
}

/// Conventions shared by every report.
pub fn base_conventions() -> BTreeMap<String, String> {
    [
        ("float_format", "17 significant digits"),
        ("randomness", "one master seed; SHA-256 named streams feeding ChaCha8"),
        ("fdr", "Benjamini-Hochberg across each coefficient table"),
        ("robust_se", "cluster sandwich H^-1 (sum_g s_g s_g') H^-1 with no small-sample correction"),
        ("ci", "95% Wald intervals; odds ratios exponentiate the bounds"),
        ("bootstrap", "percentile intervals; one named stream per replicate"),
        ("ranking_ties", "rankings are strict; ratings ties are excluded from rating-derived rankings"),
        ("wilcoxon", WILCOXON_CONVENTION),
        ("ks", KS_CONVENTION),
        ("bowker", BOWKER_CONVENTION),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

impl Report {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            command: command.into(),
            seed: None,
            config_digest: None,
            conventions: base_conventions(),
            tables: Vec::new(),
            notes: Vec::new(),
            data: Value::Null,
        }
    }

    pub fn convention(mut self, key: &str, value: impl Into<String>) -> Self {
        self.conventions.insert(key.into(), value.into());
        self
    }

    pub fn to_json(&self) -> String {
        crate::json::to_pretty(self).expect("report serializes")
    }
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn metric_table(title: &str, rows: &[MetricRow]) -> Table {
    let mut t = Table::new(title, &["metric", "value", "ci_low", "ci_high", "n", "seed"]);
    for r in rows {
        t.push(vec![r.metric.clone().into(), num(r.value), num(r.ci_low), num(r.ci_high), r.n.into(), r.seed.into()]);
    }
    t
}

pub fn coefficient_table(title: &str, fit: &FitResult) -> Table {
    let mut t = Table::new(title, &["term", "estimate", "se", "z", "p", "p_fdr", "odds_ratio", "or_ci_low", "or_ci_high"]);
    for c in &fit.coefficients {
        let opt = |v: Option<f64>| v.map_or(Value::Null, num);
        t.push(vec![
            c.name.clone().into(),
            num(c.estimate),
            num(c.se),
            num(c.z),
            num(c.p),
            num(c.p_fdr),
            opt(c.odds_ratio),
            opt(c.or_ci_low),
            opt(c.or_ci_high),
        ]);
    }
    t
}

pub fn fit_summary_table(title: &str, fit: &FitResult) -> Table {
    let mut t = Table::new(title, &["model", "log_likelihood", "null_log_likelihood", "nagelkerke_r2", "strata", "observations", "clusters", "converged", "iterations"]);
    t.push(vec![
        fit.model.clone().into(),
        num(fit.log_likelihood),
        num(fit.null_log_likelihood),
        num(fit.nagelkerke_r2),
        fit.n_strata.into(),
        fit.n_observations.into(),
        fit.n_clusters.into(),
        fit.convergence.converged.into(),
        fit.convergence.iterations.into(),
    ]);
    t
}

pub fn worth_table(title: &str, fit: &PlackettLuceFit) -> Table {
    let mut t = Table::new(title, &["item", "worth", "se", "ci_low", "ci_high", "log_worth", "log_worth_se"]);
    for (i, item) in fit.items.iter().enumerate() {
        t.push(vec![
            item.clone().into(),
            num(fit.worths[i]),
            num(fit.worth_se[i]),
            num(fit.worth_ci[i][0]),
            num(fit.worth_ci[i][1]),
            num(fit.beta[i]),
            num(fit.beta_se[i]),
        ]);
    }
    t
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::Number(n) if n.is_f64() => format!("{:.4}", n.as_f64().unwrap_or(f64::NAN)),
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Renders a report JSON document as Markdown-style text tables.
pub fn render_text(json: &str) -> Result<String, ReportError> {
    let report: Report = serde_json::from_str(json)?;
    if report.format != REPORT_FORMAT {
        return Err(ReportError::Format);
    }
    let mut out = format!("# {}\n", report.command);
    if let Some(seed) = report.seed {
        out.push_str(&format!("seed: {seed}\n"));
    }
    if let Some(d) = &report.config_digest {
        out.push_str(&format!("config digest: {d}\n"));
    }
    for t in &report.tables {
        let mut table = TextTable::new();
        table.load_style(ASCII_MARKDOWN).set_header(&t.columns);
        for row in &t.rows {
            table.add_row(row.iter().map(cell));
        }
        out.push_str(&format!("\n## {}\n\n{table}\n", t.title));
    }
    if !report.notes.is_empty() {
        out.push_str("\n## Notes\n\n");
        for n in &report.notes {
            out.push_str(&format!("- {n}\n"));
        }
    }
    out.push_str("\n## Conventions\n\n");
    for (k, v) in &report.conventions {
        out.push_str(&format!("- {k}: {v}\n"));
    }
    Ok(out)
}
