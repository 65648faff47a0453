//! Rank-ordered (exploded) logit.

use serde::{Deserialize, Serialize};

use super::{fit_conditional_logit, ChoiceData, ChoiceObservation, FitError, FitOptions, FitResult};

/// A ranked set of alternatives with covariates. `ranking` lists indices
/// into `alternatives`, best first, and must cover every alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSet {
    pub id: String,
    pub cluster: String,
    pub alternatives: Vec<(String, Vec<f64>)>,
    pub ranking: Vec<usize>,
}

/// Explodes each ranking of `m` alternatives into `m - 1` strata of sizes
/// `m, m-1, ..., 2`, where stratum `s` chooses the item ranked `s`.
pub fn explode_rankings(names: &[String], sets: &[RankedSet]) -> Result<ChoiceData, FitError> {
    let mut observations = Vec::new();
    for set in sets {
        let m = set.alternatives.len();
        let mut seen = vec![false; m];
        if set.ranking.len() != m || set.ranking.iter().any(|&i| i >= m || std::mem::replace(&mut seen[i], true)) {
            return Err(FitError::InvalidData(format!("ranking of set {:?} is not a permutation of its alternatives", set.id)));
        }
        for stage in 0..m.saturating_sub(1) {
            let stratum = format!("{}#{}", set.id, stage + 1);
            for (pos, &alt) in set.ranking[stage..].iter().enumerate() {
                let (name, x) = &set.alternatives[alt];
                observations.push(ChoiceObservation {
                    stratum: stratum.clone(),
                    alternative: name.clone(),
                    covariates: x.clone(),
                    chosen: pos == 0,
                    cluster: set.cluster.clone(),
                });
            }
        }
    }
    Ok(ChoiceData { names: names.to_vec(), observations })
}

pub fn fit_rank_ordered_logit(names: &[String], sets: &[RankedSet], opts: &FitOptions) -> Result<FitResult, FitError> {
    let data = explode_rankings(names, sets)?;
    let mut fit = fit_conditional_logit(&data, opts)?;
    fit.model = "rank_ordered_logit".into();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn dummy_set(id: &str, order: &[usize]) -> RankedSet {
        let alternatives = (0..4)
            .map(|i| (format!("m{i}"), (1..4).map(|k| if k == i { 1.0 } else { 0.0 }).collect()))
            .collect();
        RankedSet { id: id.into(), cluster: format!("p-{id}"), alternatives, ranking: order.to_vec() }
    }

    fn names() -> Vec<String> {
        vec!["m1".into(), "m2".into(), "m3".into()]
    }

    #[test]
    fn one_ranking_gives_three_strata() {
        let data = explode_rankings(&names(), &[dummy_set("t", &[2, 0, 3, 1])]).unwrap();
        let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
        for o in &data.observations {
            *sizes.entry(o.stratum.as_str()).or_default() += 1;
        }
        assert_eq!(sizes.values().copied().collect::<Vec<_>>(), vec![4, 3, 2]);
        let chosen: Vec<&str> = data.observations.iter().filter(|o| o.chosen).map(|o| o.alternative.as_str()).collect();
        assert_eq!(chosen, vec!["m2", "m0", "m3"]);
    }

    #[test]
    fn symmetric_data_gives_zero() {
        let perms = crate::model::Ranking::all_permutations();
        let sets: Vec<RankedSet> = perms
            .iter()
            .enumerate()
            .map(|(k, r)| dummy_set(&format!("t{k}"), &r.labels().iter().map(|l| l.index()).collect::<Vec<_>>()))
            .collect();
        let fit = fit_rank_ordered_logit(&names(), &sets, &FitOptions::default()).unwrap();
        assert!(fit.coefficients.iter().all(|c| c.estimate.abs() < 1e-12));
    }

    #[test]
    fn non_permutation_rejected() {
        let mut s = dummy_set("t", &[0, 1, 2, 3]);
        s.ranking = vec![0, 1, 1, 3];
        assert!(matches!(explode_rankings(&names(), &[s]), Err(FitError::InvalidData(_))));
    }
}
