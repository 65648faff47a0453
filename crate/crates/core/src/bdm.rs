//! Becker-DeGroot-Marschak willingness-to-pay elicitation.
//!
//! One arm is drawn uniformly; the participant buys it at its cost price
//! when their bid is at least that cost.

use std::collections::BTreeMap;
use std::fmt::Debug;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::stream;

pub const MAX_BID: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BdmError {
    #[error("bids and costs cover different arms")]
    ArmMismatch,
    #[error("bid {0} outside [0, 10]")]
    OutOfRangeBid(f64),
    #[error("cost {0} is negative or not finite")]
    InvalidCost(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdmOutcome<K> {
    pub selected_arm: K,
    pub transacted: bool,
    pub price_paid: f64,
}

fn validate<K: Ord>(bids: &BTreeMap<K, f64>, costs: &BTreeMap<K, f64>) -> Result<(), BdmError> {
    if bids.is_empty() || !bids.keys().eq(costs.keys()) {
        return Err(BdmError::ArmMismatch);
    }
    if let Some(&b) = bids.values().find(|b| !(0.0..=MAX_BID).contains(*b)) {
        return Err(BdmError::OutOfRangeBid(b));
    }
    if let Some(&c) = costs.values().find(|c| !c.is_finite() || **c < 0.0) {
        return Err(BdmError::InvalidCost(c));
    }
    Ok(())
}

/// Resolves the auction for an already-selected arm.
pub fn resolve_selected<K: Ord + Clone>(
    bids: &BTreeMap<K, f64>,
    costs: &BTreeMap<K, f64>,
    selected: &K,
) -> Result<BdmOutcome<K>, BdmError> {
    validate(bids, costs)?;
    let (bid, cost) = match (bids.get(selected), costs.get(selected)) {
        (Some(b), Some(c)) => (*b, *c),
        _ => return Err(BdmError::ArmMismatch),
    };
    let transacted = bid >= cost;
    Ok(BdmOutcome { selected_arm: selected.clone(), transacted, price_paid: if transacted { cost } else { 0.0 } })
}

/// Draws the arm from the `["bdm"]` stream of `seed`, then resolves.
pub fn resolve_bdm<K: Ord + Clone>(
    bids: &BTreeMap<K, f64>,
    costs: &BTreeMap<K, f64>,
    seed: u64,
) -> Result<BdmOutcome<K>, BdmError> {
    validate(bids, costs)?;
    let keys: Vec<&K> = bids.keys().collect();
    let pick = stream(seed, &["bdm"]).random_range(0..keys.len());
    resolve_selected(bids, costs, keys[pick])
}

/// Expected utility `E[(v - c) 1{b >= c}]` under a discrete cost distribution.
pub fn expected_utility(value: f64, bid: f64, costs: &[(f64, f64)]) -> f64 {
    costs.iter().filter(|(c, _)| bid >= *c).map(|(c, p)| p * (value - c)).sum()
}

/// Uniform distribution on `lo, lo + step, ..., hi`.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

pub fn uniform_costs(grid: &[f64]) -> Vec<(f64, f64)> {
    let p = 1.0 / grid.len() as f64;
    grid.iter().map(|c| (*c, p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub value: f64,
    pub bid: f64,
    pub truthful_utility: f64,
    pub bid_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthfulnessReport {
    pub comparisons: usize,
    /// Misreports that did strictly worse than the truth.
    pub strictly_worse: usize,
    pub violations: Vec<Violation>,
}

/// Checks that bidding the true value weakly dominates every other bid on
/// the grid. Utilities within `1e-12` count as ties.
pub fn verify_truthfulness(values: &[f64], bids: &[f64], costs: &[(f64, f64)]) -> TruthfulnessReport {
    let mut report = TruthfulnessReport { comparisons: 0, strictly_worse: 0, violations: Vec::new() };
    for &v in values {
        let truthful = expected_utility(v, v, costs);
        for &b in bids.iter().filter(|b| **b != v) {
            let other = expected_utility(v, b, costs);
            report.comparisons += 1;
            if other > truthful + 1e-12 {
                report.violations.push(Violation { value: v, bid: b, truthful_utility: truthful, bid_utility: other });
            } else if other < truthful - 1e-12 {
                report.strictly_worse += 1;
            }
        }
    }
    report
}
