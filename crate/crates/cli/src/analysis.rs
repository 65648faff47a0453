use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use prefsim::choice::design::{choice_data, model_rankings, position_bias_fit, ranked_sets, rating_design, ChoiceTarget, SourceTrials};
use prefsim::choice::{fit_conditional_logit, fit_ols_clustered, fit_plackett_luce, fit_rank_ordered_logit, FitOptions};
use prefsim::exec::Exec;
use prefsim::metrics::{
    compare_conditions, mean_tau, self_consistency, top_k_estimate, BootstrapOptions, BootstrapUnit, MatchedTrialPair,
    MetricRow, PairMetric,
};
use prefsim::model::{filter_trials, FilterStrategy, ModelId, RatingScale, Trial};
use prefsim::report::{coefficient_table, fit_summary_table, metric_table, render_text, worth_table, Report, Table};
use prefsim::stats::{ks_two_sample, mcnemar_bowker, wilcoxon_rank_sum};
use serde_json::json;

use crate::error::{CliError, Classify};
use crate::io::{emit, read_rows, read_text, trials_only};
use crate::Global;

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Matched ranking pairs (JSONL: trial_id, participant, sim_rank, human_rank).
    #[arg(long, conflicts_with = "sim")]
    pairs: Option<PathBuf>,
    /// Simulated trials, matched to --human by trial id.
    #[arg(long, requires = "human")]
    sim: Option<PathBuf>,
    /// Human trials. Alone, only the self-consistency ceiling is computed.
    #[arg(long)]
    human: Option<PathBuf>,
    /// Second set of pairs for a paired comparison on shared trials.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    /// Resampling unit: trial or participant.
    #[arg(long, default_value = "trial")]
    unit: String,
    /// Confidence level of the percentile intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Print text tables instead of JSON.
    #[arg(long)]
    text: bool,
}

fn parse_unit(s: &str) -> Result<BootstrapUnit, CliError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "trial" => Ok(BootstrapUnit::Trial),
        "participant" | "user" => Ok(BootstrapUnit::Participant),
        _ => Err(CliError::invalid(format!("unknown bootstrap unit {s:?} (trial|participant)"))),
    }
}

fn matched_pairs(sim: &[Trial], human: &[Trial]) -> Vec<MatchedTrialPair> {
    let by_id: BTreeMap<String, &Trial> = sim.iter().map(|t| (t.id(), t)).collect();
    human.iter().filter_map(|h| by_id.get(&h.id()).and_then(|s| MatchedTrialPair::from_trials(s, h))).collect()
}

fn top_choice_table(pairs: &[MatchedTrialPair]) -> Vec<Vec<u64>> {
    let idx = |name: &str| ModelId::ALL.iter().position(|m| m.as_str() == name);
    let mut table = vec![vec![0u64; 4]; 4];
    for p in pairs {
        if let (Some(h), Some(s)) = (p.human_rank.first().and_then(|n| idx(n)), p.sim_rank.first().and_then(|n| idx(n))) {
            table[h][s] += 1;
        }
    }
    table
}

fn finish(g: &Global, report: Report, text: bool) -> Result<(), CliError> {
    let json = report.to_json();
    if text {
        emit(g.out.as_deref(), &render_text(&json).runtime("render report")?)
    } else {
        emit(g.out.as_deref(), &json)
    }
}

pub fn evaluate(g: &Global, a: EvaluateArgs) -> Result<(), CliError> {
    if !(a.level > 0.0 && a.level < 1.0) || a.bootstrap == 0 {
        return Err(CliError::invalid("--level must lie in (0,1) and --bootstrap must be >= 1"));
    }
    let opts = BootstrapOptions { iterations: a.bootstrap, seed: g.seed(), unit: parse_unit(&a.unit)?, level: a.level, exec: Exec::Parallel };
    let human = a.human.as_deref().map(trials_only).transpose()?;
    let pairs: Option<Vec<MatchedTrialPair>> = match (&a.pairs, &a.sim, &human) {
        (Some(p), _, _) => Some(read_rows(p)?),
        (None, Some(s), Some(h)) => Some(matched_pairs(&trials_only(s)?, h)),
        _ => None,
    };
    if pairs.is_none() && human.is_none() {
        return Err(CliError::invalid("evaluate needs --pairs, --sim with --human, or --human"));
    }
    let mut report = Report::new("evaluate")
        .convention("bootstrap_unit", a.unit.to_ascii_lowercase())
        .convention("bootstrap_iterations", a.bootstrap.to_string())
        .convention("ci_level", a.level.to_string())
        .convention("condition_comparison", "paired bootstrap over shared trial ids; two-sided percentile p-value");
    report.seed = Some(g.seed());
    let args = json!({ "pairs": a.pairs, "sim": a.sim, "human": a.human, "compare": a.compare, "bootstrap": a.bootstrap, "unit": a.unit, "level": a.level });
    report.config_digest = Some(prefsim::seed::digest_hex(args.to_string().as_bytes()));
    let mut rows = Vec::new();
    let mut data = serde_json::Map::new();
    if let Some(pairs) = &pairs {
        if pairs.is_empty() {
            return Err(CliError::invalid("no matched trial pairs"));
        }
        let tau = mean_tau(pairs, &opts).invalid("rankings must be permutations of the same items")?;
        rows.push(MetricRow::new("mean_tau", &tau, g.seed()));
        for k in [1, 2] {
            rows.push(MetricRow::new(format!("top_{k}"), &top_k_estimate(pairs, k, &opts), g.seed()));
        }
        match mcnemar_bowker(&top_choice_table(pairs)) {
            Ok(t) => {
                let mut tab = Table::new("top-choice symmetry (human vs simulated)", &["test", "statistic", "df", "p"]);
                tab.push(vec!["mcnemar_bowker".into(), json!(t.statistic), t.df.into(), json!(t.p)]);
                report.tables.push(tab);
            }
            Err(e) => report.notes.push(format!("top-choice symmetry test skipped: {e}")),
        }
        data.insert("top_choice_table".into(), json!(top_choice_table(pairs)));
    }
    if let Some(h) = &human {
        match self_consistency(h, &opts) {
            Some(sc) => {
                rows.push(MetricRow::new("self_consistency_tau", &sc.tau, g.seed()));
                rows.push(MetricRow::new("self_consistency_top_1", &sc.top1, g.seed()));
                report.notes.push(format!(
                    "self-consistency: {} trials used, {} excluded for tied ratings, {} without ratings or ranking",
                    sc.n_used, sc.n_tied_excluded, sc.n_incomplete
                ));
            }
            None => report.notes.push("self-consistency: no trial has both untied ratings and a ranking".into()),
        }
    }
    report.tables.insert(0, metric_table("agreement", &rows));
    if let (Some(path), Some(pairs)) = (&a.compare, &pairs) {
        let other: Vec<MatchedTrialPair> = read_rows(path)?;
        let mut tab = Table::new("condition comparison (pairs minus compare)", &["metric", "difference", "ci_low", "ci_high", "n", "p"]);
        for (name, m) in [("tau", PairMetric::Tau), ("top_1", PairMetric::TopK(1))] {
            let c = compare_conditions(pairs, &other, m, &opts).invalid("condition comparison")?;
            let d = &c.difference;
            tab.push(vec![name.into(), json!(d.value), json!(d.ci_low), json!(d.ci_high), d.n.into(), json!(c.p)]);
        }
        report.tables.push(tab);
        let taus = |ps: &[MatchedTrialPair]| ps.iter().filter_map(|p| p.tau().ok()).collect::<Vec<_>>();
        let (x, y) = (taus(pairs), taus(&other));
        let mut tab = Table::new("per-trial tau distributions", &["test", "statistic", "z", "p"]);
        if let Ok(k) = ks_two_sample(&x, &y) {
            tab.push(vec!["kolmogorov_smirnov".into(), json!(k.d), serde_json::Value::Null, json!(k.p)]);
        }
        if let Ok(w) = wilcoxon_rank_sum(&x, &y) {
            tab.push(vec!["wilcoxon_rank_sum".into(), json!(w.u), json!(w.z), json!(w.p)]);
        }
        report.tables.push(tab);
    }
    report.data = serde_json::Value::Object(data);
    finish(g, report, a.text)
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Trials (JSONL, native or external layout).
    #[arg(long)]
    trials: PathBuf,
    /// Error handling: full, binary_control, split_control, row_deletion, trial_deletion, user_deletion.
    #[arg(long, default_value = "full")]
    strategy: String,
    /// clogit, rank_ordered, plackett_luce, rating or position.
    #[arg(long, default_value = "clogit")]
    model: String,
    /// Outcome for clogit: ranked_best or opening_choice.
    #[arg(long, default_value = "ranked_best")]
    target: String,
    /// Rating scale for the rating model.
    #[arg(long, default_value = "preference")]
    scale: String,
    /// Print text tables instead of JSON.
    #[arg(long)]
    text: bool,
}

pub fn fit(g: &Global, a: FitArgs) -> Result<(), CliError> {
    let strategy: FilterStrategy = a.strategy.parse().invalid("--strategy")?;
    let trials = trials_only(&a.trials)?;
    let outcome = filter_trials(&trials, strategy);
    let opts = FitOptions { exec: Exec::Parallel, ..FitOptions::default() };
    let mut report = Report::new("fit")
        .convention("strategy", a.strategy.clone())
        .convention("newton", format!("max_iter {}, relative LL change < {:e} with small step, gradient inf-norm < {:e}; separation if |beta| > {}", opts.max_iter, opts.rel_ll_tol, opts.grad_tol, opts.separation_bound))
        .convention("model_reference", "Base model; position A");
    report.seed = g.seed;
    let args = json!({ "trials": a.trials, "strategy": a.strategy, "model": a.model, "target": a.target, "scale": a.scale });
    report.config_digest = Some(prefsim::seed::digest_hex(args.to_string().as_bytes()));
    report.data = json!({ "drops": outcome.drops, "retained_trials": outcome.trials.len() });
    let fail = |e: prefsim::choice::FitError| CliError::Runtime(anyhow::anyhow!("fit failed: {e}"));
    match a.model.as_str() {
        "clogit" => {
            let target = match a.target.as_str() {
                "ranked_best" => ChoiceTarget::RankedBest,
                "opening_choice" => ChoiceTarget::OpeningChoice,
                t => return Err(CliError::invalid(format!("unknown --target {t:?}"))),
            };
            let (data, skipped) = choice_data(&outcome, target);
            if skipped > 0 {
                report.notes.push(format!("{skipped} trials lacked the outcome and were skipped"));
            }
            let fit = fit_conditional_logit(&data, &opts).map_err(fail)?;
            report.tables.push(coefficient_table("conditional logit", &fit));
            report.tables.push(fit_summary_table("fit", &fit));
        }
        "rank_ordered" => {
            let (names, sets) = ranked_sets(&outcome);
            let fit = fit_rank_ordered_logit(&names, &sets, &opts).map_err(fail)?;
            report.tables.push(coefficient_table("rank-ordered logit", &fit));
            report.tables.push(fit_summary_table("fit", &fit));
        }
        "plackett_luce" => {
            let items: Vec<String> = ModelId::ALL.iter().map(|m| m.to_string()).collect();
            let fit = fit_plackett_luce(&model_rankings(&outcome), &items, 0, &opts).map_err(fail)?;
            report.tables.push(worth_table("Plackett-Luce worths", &fit));
            let mut win = Table::new("P(row ranked above column)", &["item", "Base", "DPFT", "PPFT", "Prompting"]);
            for (i, row) in fit.win.iter().enumerate() {
                let mut r = vec![json!(items[i])];
                r.extend(row.iter().map(|v| json!(v)));
                win.push(r);
            }
            report.tables.push(win);
            report.notes.push(format!("{} rankings, log-likelihood {:.6}", fit.n_rankings, fit.log_likelihood));
        }
        "rating" => {
            let scale: RatingScale = a.scale.parse().invalid("--scale")?;
            let d = rating_design(&outcome, scale);
            let ols = fit_ols_clustered(&d.y, &d.x, &d.clusters, &d.names).map_err(fail)?;
            let mut t = Table::new(format!("{} rating OLS (participant-clustered)", a.scale), &["term", "estimate", "se"]);
            for (i, c) in ols.coefficients.iter().enumerate() {
                t.push(vec![d.names[i].clone().into(), json!(c), json!(ols.covariance[i][i].sqrt())]);
            }
            report.tables.push(t);
            report.notes.push(format!("{} observations in {} clusters", ols.n, ols.n_clusters));
        }
        "position" => {
            let src = [SourceTrials { source: "trials".into(), trials: &trials }];
            let fit = position_bias_fit(&src, "trials", false, &opts).map_err(fail)?;
            report.tables.push(coefficient_table("position effects (reference A)", &fit));
            report.tables.push(fit_summary_table("fit", &fit));
        }
        m => return Err(CliError::invalid(format!("unknown --model {m:?}"))),
    }
    finish(g, report, a.text)
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A report JSON document written by another command.
    #[arg(long)]
    input: PathBuf,
}

pub fn report(g: &Global, a: ReportArgs) -> Result<(), CliError> {
    let text = render_text(&read_text(&a.input)?).invalid(&format!("{} is not a report", a.input.display()))?;
    emit(g.out.as_deref(), &text)
}
