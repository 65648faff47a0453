use std::collections::BTreeMap;

use clap::Args;
use prefsim::bdm::{resolve_bdm, resolve_selected, uniform_costs, uniform_grid, verify_truthfulness, MAX_BID};
use prefsim::model::ArmLabel;
use prefsim::report::{Report, Table};
use serde_json::json;

use crate::error::{CliError, Classify};
use crate::io::emit;
use crate::Global;

#[derive(Debug, Args)]
pub struct BdmArgs {
    /// Check weak dominance of truthful bidding on a value x bid x cost grid.
    #[arg(long, conflicts_with_all = ["bids", "costs"])]
    verify: bool,
    /// Grid step for --verify.
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    /// Bids per arm, e.g. `A=3,B=8,C=0,D=1.5`.
    #[arg(long, requires = "costs")]
    bids: Option<String>,
    /// Cost prices per arm, same form as --bids.
    #[arg(long)]
    costs: Option<String>,
    /// Arm to resolve; drawn from the seed when absent.
    #[arg(long)]
    selected: Option<String>,
}

fn parse_map(s: &str) -> Result<BTreeMap<ArmLabel, f64>, CliError> {
    let mut out = BTreeMap::new();
    for item in s.split(',').filter(|x| !x.trim().is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| CliError::invalid(format!("expected LABEL=AMOUNT, got {item:?}")))?;
        let label: ArmLabel = k.parse().invalid("arm label")?;
        let v: f64 = v.trim().parse().invalid(&format!("amount for {label}"))?;
        out.insert(label, v);
    }
    Ok(out)
}

pub fn run(g: &Global, a: BdmArgs) -> Result<(), CliError> {
    let mut report = Report::new("bdm").convention("transaction_rule", "transact when bid >= cost; price paid is the cost");
    report.seed = Some(g.seed());
    if a.verify {
        if !(a.step > 0.0) {
            return Err(CliError::invalid("--step must be > 0"));
        }
        let grid = uniform_grid(0.0, MAX_BID, a.step);
        let r = verify_truthfulness(&grid, &grid, &uniform_costs(&grid));
        let mut t = Table::new("truthfulness", &["grid_step", "comparisons", "strictly_worse", "violations"]);
        t.push(vec![json!(a.step), r.comparisons.into(), r.strictly_worse.into(), r.violations.len().into()]);
        report.tables.push(t);
        report.data = json!(r);
        emit(g.out.as_deref(), &report.to_json())?;
        if !r.violations.is_empty() {
            return Err(CliError::Runtime(anyhow::anyhow!("{} weak-dominance violations", r.violations.len())));
        }
        return Ok(());
    }
    let (Some(bids), Some(costs)) = (&a.bids, &a.costs) else {
        return Err(CliError::invalid("bdm needs --verify or --bids with --costs"));
    };
    let (bids, costs) = (parse_map(bids)?, parse_map(costs)?);
    let outcome = match &a.selected {
        Some(s) => resolve_selected(&bids, &costs, &s.parse::<ArmLabel>().invalid("--selected")?),
        None => resolve_bdm(&bids, &costs, g.seed()),
    }
    .invalid("auction inputs")?;
    let mut t = Table::new("outcome", &["selected_arm", "bid", "cost", "transacted", "price_paid"]);
    let l = outcome.selected_arm;
    t.push(vec![l.to_string().into(), json!(bids[&l]), json!(costs[&l]), outcome.transacted.into(), json!(outcome.price_paid)]);
    report.tables.push(t);
    emit(g.out.as_deref(), &report.to_json())
}
