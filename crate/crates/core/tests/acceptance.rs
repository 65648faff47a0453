//! Acceptance criteria 1-10. Prints one PASS/FAIL/SKIP line per criterion and
//! exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use prefsim::agents::{Assistant, ScriptedAssistant, ScriptedUser, UtilityFn, UtilityJudge};
use prefsim::bdm::{resolve_selected, uniform_costs, uniform_grid, verify_truthfulness};
use prefsim::choice::design::{model_rankings, position_bias_fit, SourceTrials};
use prefsim::choice::plackett_luce::fit_plackett_luce;
use prefsim::choice::{fdr_adjust, fit_conditional_logit, ChoiceData, ChoiceObservation, FitOptions};
use prefsim::exec::Exec;
use prefsim::experiment::{run_experiment, Agents, Condition, ExperimentPlan, TurnBudget};
use prefsim::ingest::ingest_prism_like;
use prefsim::metrics::{kendall_tau, mean_tau, self_consistency, top_k_accuracy, top_k_match, BootstrapOptions, MatchedTrialPair};
use prefsim::model::{filter_trials, Domain, FilterStrategy, ModelId, Trial, UserProfile};
use prefsim::policy::{Matrix, PersonalizedPolicy, ToyPolicy, UserEmbeddingModel};
use prefsim::seed::stream;
use prefsim::stats::{icc_2_1, ks_two_sample, levenshtein, mcnemar_bowker};
use prefsim::training::{
    dpo_loss, dpo_loss_grad, pairwise_accuracy, pdpo_loss, pdpo_loss_grad, train, InitialModel, PreferencePair,
    TrainingConfig,
};
use rand::Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<String, String> {
    let t = start.elapsed();
    ensure(t < budget, format!("took {:.2?}, budget {:.0?}", t, budget))?;
    Ok(format!("{:.2?}", t))
}

// 1

fn loss_identities() -> Check {
    let start = Instant::now();
    let policy = ToyPolicy::init(6, 3, 3).map_err(|e| e.to_string())?;
    let mut users = UserEmbeddingModel::init(2, 2, 3, &["u1", "u2"], 3).map_err(|e| e.to_string())?;
    for m in &mut users.bank {
        m.data.iter_mut().for_each(|v| *v = 0.0);
    }
    let model = PersonalizedPolicy { policy: policy.clone(), users };
    let batch: Vec<PreferencePair> = (0..5)
        .map(|i| PreferencePair {
            prompt: vec![1 + i % 3, 2],
            chosen: vec![3, 4],
            rejected: vec![5],
            user: if i % 2 == 0 { "u1".into() } else { "u2".into() },
        })
        .collect();
    let mut worst: f64 = 0.0;
    for beta in [0.1, 0.5, 2.0] {
        let d = dpo_loss(&batch, &policy, &policy, beta).map_err(|e| e.to_string())?;
        worst = worst.max((d - std::f64::consts::LN_2).abs());
        for alpha in [0.0, 0.5, 1.0] {
            let p = pdpo_loss(&batch, &model, &policy, alpha, beta).map_err(|e| e.to_string())?;
            worst = worst.max((p - std::f64::consts::LN_2).abs());
        }
    }
    ensure(worst < 1e-9, format!("max |loss - ln 2| = {worst:e}"))?;
    let t = within_budget(start, Duration::from_secs(1))?;
    Ok(format!("max |loss - ln 2| = {worst:.1e} over 3 betas x (dpo + 3 alphas), {t}"))
}

// 2

fn uniform_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

/// Central differences of `f` around `x`.
fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn random_tokens<R: Rng>(vocab: usize, rng: &mut R) -> Vec<usize> {
    let n = rng.random_range(1..=3);
    (0..n).map(|_| rng.random_range(0..vocab)).collect()
}

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |k: &'static str, e: f64| {
        let w = worst.entry(k).or_insert(0.0);
        *w = w.max(e);
    };
    for instance in 0..20 {
        let mut rng = stream(2_024, &["gradient-instance", &instance.to_string()]);
        let vocab = rng.random_range(2..=6);
        let dim = rng.random_range(1..=4);
        let tu = rng.random_range(1..=3);
        let k = rng.random_range(1..=3);
        let mut policy = ToyPolicy::new(vocab, dim).map_err(|e| e.to_string())?;
        policy.set_flat(&uniform_vec(policy.n_params(), &mut rng));
        let mut reference = policy.clone();
        reference.set_flat(&uniform_vec(policy.n_params(), &mut rng));
        let mut users = UserEmbeddingModel::init(k, tu, dim, &["u0", "u1"], instance).map_err(|e| e.to_string())?;
        let n_user = users.flat().len();
        users.set_flat(&uniform_vec(n_user, &mut rng));
        let batch: Vec<PreferencePair> = (0..3)
            .map(|i| PreferencePair {
                prompt: random_tokens(vocab, &mut rng),
                chosen: random_tokens(vocab, &mut rng),
                rejected: random_tokens(vocab, &mut rng),
                user: format!("u{}", i % 2),
            })
            .collect();
        let alpha: f64 = rng.random_range(0.0..1.0);
        let beta: f64 = rng.random_range(0.1..2.0);
        let context = Matrix { rows: tu, cols: dim, data: uniform_vec(tu * dim, &mut rng) };
        let pair = &batch[0];

        let g = policy.log_prob_grad(&pair.prompt, &pair.chosen, Some(&context)).map_err(|e| e.to_string())?;
        let num = numeric_grad(&policy.flat(), |x| {
            let mut p = policy.clone();
            p.set_flat(x);
            p.log_prob(&pair.prompt, &pair.chosen, Some(&context)).unwrap()
        });
        note("log_prob wrt E,W", rel_err(&g.policy.flat(), &num));
        let num = numeric_grad(&context.data, |x| {
            let c = Matrix { rows: tu, cols: dim, data: x.to_vec() };
            policy.log_prob(&pair.prompt, &pair.chosen, Some(&c)).unwrap()
        });
        note("log_prob wrt context", rel_err(&g.context.expect("context given").data, &num));

        let g = dpo_loss_grad(&batch, &policy, &reference, beta, Exec::Sequential).map_err(|e| e.to_string())?;
        let num = numeric_grad(&policy.flat(), |x| {
            let mut p = policy.clone();
            p.set_flat(x);
            dpo_loss(&batch, &p, &reference, beta).unwrap()
        });
        note("dpo wrt E,W", rel_err(&g.policy.flat(), &num));

        let model = PersonalizedPolicy { policy: policy.clone(), users: users.clone() };
        let g = pdpo_loss_grad(&batch, &model, &reference, alpha, beta, Exec::Sequential).map_err(|e| e.to_string())?;
        let num = numeric_grad(&policy.flat(), |x| {
            let mut m = model.clone();
            m.policy.set_flat(x);
            pdpo_loss(&batch, &m, &reference, alpha, beta).unwrap()
        });
        note("pdpo wrt E,W", rel_err(&g.policy.flat(), &num));
        let num = numeric_grad(&users.flat(), |x| {
            let mut m = model.clone();
            m.users.set_flat(x);
            pdpo_loss(&batch, &m, &reference, alpha, beta).unwrap()
        });
        note("pdpo wrt V,w_i,w_0", rel_err(&g.users.expect("personalised").flat(), &num));
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(max < 1e-4, format!("relative error too large: {detail}"))?;
    let t = within_budget(start, Duration::from_secs(30))?;
    Ok(format!("20 instances, worst relative error {max:.1e} ({detail}), {t}"))
}

// 3

fn personalisation_separation() -> Check {
    let start = Instant::now();
    let mut pairs = Vec::new();
    for u in 0..8 {
        let (chosen, rejected) = if u % 2 == 0 { (4, 5) } else { (5, 4) };
        for p in 1..=2 {
            pairs.push(PreferencePair { prompt: vec![p, 3], chosen: vec![chosen], rejected: vec![rejected], user: format!("u{u}") });
        }
    }
    let cfg = TrainingConfig {
        alpha: 0.5,
        beta: 0.5,
        learning_rate: 2.0,
        epochs: 300,
        batch_size: pairs.len(),
        seed: 1,
        ..TrainingConfig::default()
    };
    let ids = prefsim::training::dataset_users(&pairs);
    let policy = ToyPolicy::init(6, 4, 1).map_err(|e| e.to_string())?;
    let users = UserEmbeddingModel::init(2, 2, 4, &ids, 1).map_err(|e| e.to_string())?;
    let p = train(&pairs, InitialModel::Pdpo(PersonalizedPolicy { policy: policy.clone(), users }), &cfg, Exec::Parallel)
        .map_err(|e| e.to_string())?;
    let d = train(&pairs, InitialModel::Dpo(policy), &cfg, Exec::Parallel).map_err(|e| e.to_string())?;
    let acc_p = pairwise_accuracy(&pairs, &p.policy, p.users.as_ref()).map_err(|e| e.to_string())?;
    let acc_d = pairwise_accuracy(&pairs, &d.policy, None).map_err(|e| e.to_string())?;
    let dpo_final = *d.loss_trace.last().expect("trace");
    ensure(acc_p >= 0.95 && acc_d <= 0.55, format!("pdpo accuracy {acc_p:.3} (need >= 0.95), dpo {acc_d:.3} (need <= 0.55)"))?;
    let t = within_budget(start, Duration::from_secs(120))?;
    Ok(format!("pdpo accuracy {acc_p:.3}, dpo accuracy {acc_d:.3}, final dpo loss {dpo_final:.4} (ln 2 = 0.6931), {t}"))
}

// 4

fn sample_pl<R: Rng>(worths: &[f64], rng: &mut R) -> Vec<usize> {
    let mut left: Vec<usize> = (0..worths.len()).collect();
    let mut out = Vec::with_capacity(worths.len());
    while !left.is_empty() {
        let total: f64 = left.iter().map(|&i| worths[i]).sum();
        let mut u = rng.random_range(0.0..total);
        let mut pick = left.len() - 1;
        for (k, &i) in left.iter().enumerate() {
            if u < worths[i] {
                pick = k;
                break;
            }
            u -= worths[i];
        }
        out.push(left.remove(pick));
    }
    out
}

/// Plackett-Luce log-likelihood written out stage by stage.
fn pl_log_likelihood(rankings: &[Vec<usize>], beta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for r in rankings {
        for s in 0..r.len() - 1 {
            let denom: f64 = r[s..].iter().map(|&i| beta[i].exp()).sum();
            ll += beta[r[s]] - denom.ln();
        }
    }
    ll
}

/// Grid search for the maximiser of a 2-D function, refined around the best cell.
fn grid_argmax(f: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let (mut cx, mut cy, mut half) = (0.0, 0.0, 5.0);
    while half > 1e-6 {
        let mut best = (f64::NEG_INFINITY, cx, cy);
        for i in 0..=40 {
            for j in 0..=40 {
                let x = cx - half + half * i as f64 / 20.0;
                let y = cy - half + half * j as f64 / 20.0;
                let v = f(x, y);
                if v > best.0 {
                    best = (v, x, y);
                }
            }
        }
        (cx, cy) = (best.1, best.2);
        half /= 10.0;
    }
    (cx, cy)
}

fn plackett_luce_recovery() -> Check {
    let start = Instant::now();
    let truth = [0.4, 0.3, 0.2, 0.1];
    let mut rng = stream(4, &["pl-recovery"]);
    let rankings: Vec<Vec<usize>> = (0..20_000).map(|_| sample_pl(&truth, &mut rng)).collect();
    let items: Vec<String> = ["w1", "w2", "w3", "w4"].iter().map(|s| s.to_string()).collect();
    let fit = fit_plackett_luce(&rankings, &items, 0, &FitOptions::default()).map_err(|e| e.to_string())?;
    let max_dev = fit.worths.iter().zip(truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let sum_dev = (fit.worths.iter().sum::<f64>() - 1.0).abs();
    ensure(max_dev < 0.01, format!("max |worth - truth| = {max_dev:.4}"))?;
    ensure(sum_dev < 1e-12, format!("worths sum off by {sum_dev:e}"))?;

    let mut grid_dev: f64 = 0.0;
    for (k, w) in [[0.5, 0.3, 0.2], [0.2, 0.2, 0.6], [0.45, 0.1, 0.45]].iter().enumerate() {
        let mut rng = stream(4, &["pl-grid", &k.to_string()]);
        let mut rs: Vec<Vec<usize>> = (0..300).map(|_| sample_pl(w, &mut rng)).collect();
        // partial rankings exercise the subset stages too
        rs.extend((0..50).map(|_| sample_pl(w, &mut rng)[..2].to_vec()));
        let names: Vec<String> = (0..3).map(|i| format!("i{i}")).collect();
        let fit = fit_plackett_luce(&rs, &names, 0, &FitOptions::default()).map_err(|e| e.to_string())?;
        let (b1, b2) = grid_argmax(|x, y| pl_log_likelihood(&rs, &[0.0, x, y]));
        grid_dev = grid_dev.max((fit.beta[1] - b1).abs()).max((fit.beta[2] - b2).abs());
    }
    ensure(grid_dev < 1e-3, format!("3-item fits differ from the grid oracle by {grid_dev:.2e}"))?;
    let t = within_budget(start, Duration::from_secs(10))?;
    Ok(format!(
        "max |worth - truth| = {max_dev:.4} at n = 20000, |sum - 1| = {sum_dev:.0e}, grid oracle gap {grid_dev:.1e}, {t}"
    ))
}

// 5

fn obs(stratum: &str, alt: &str, x: f64, chosen: bool, cluster: &str) -> ChoiceObservation {
    ChoiceObservation {
        stratum: stratum.into(),
        alternative: alt.into(),
        covariates: vec![x],
        chosen,
        cluster: cluster.into(),
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn conditional_logit_closed_form() -> Check {
    let start = Instant::now();
    let mut o = Vec::new();
    for s in 0..4 {
        let id = format!("s{s}");
        let c = format!("c{}", s % 2);
        o.push(obs(&id, "treated", 1.0, s < 3, &c));
        o.push(obs(&id, "control", 0.0, s >= 3, &c));
    }
    let fit = fit_conditional_logit(&ChoiceData { names: vec!["x".into()], observations: o }, &FitOptions::default())
        .map_err(|e| e.to_string())?;
    let ln3_err = (fit.coefficients[0].estimate - 3f64.ln()).abs();
    ensure(ln3_err < 1e-6, format!("|beta - ln 3| = {ln3_err:e}"))?;
    let mut monotone = fit.convergence.ll_trace.windows(2).all(|w| w[1] >= w[0]);

    // Six rows: three binary choice sets, two clusters. Differences d = x_chosen - x_other.
    let sets = [(1.0, 0.0, "c0"), (0.0, 1.0, "c0"), (2.0, 0.0, "c1")];
    let mut o = Vec::new();
    for (s, &(xc, xo, c)) in sets.iter().enumerate() {
        let id = format!("t{s}");
        o.push(obs(&id, "a", xc, true, c));
        o.push(obs(&id, "b", xo, false, c));
    }
    let toy = fit_conditional_logit(&ChoiceData { names: vec!["x".into()], observations: o }, &FitOptions::default())
        .map_err(|e| e.to_string())?;
    monotone &= toy.convergence.ll_trace.windows(2).all(|w| w[1] >= w[0]);
    let d: Vec<f64> = sets.iter().map(|(a, b, _)| a - b).collect();
    let score = |b: f64| d.iter().map(|d| d * (1.0 - sigmoid(b * d))).sum::<f64>();
    let (mut lo, mut hi) = (-20.0, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let info: f64 = d.iter().map(|d| d * d * sigmoid(b * d) * (1.0 - sigmoid(b * d))).sum();
    let s: Vec<f64> = d.iter().map(|d| d * (1.0 - sigmoid(b * d))).collect();
    let meat = (s[0] + s[1]).powi(2) + s[2].powi(2);
    let se = (meat / (info * info)).sqrt();
    let beta_err = (toy.coefficients[0].estimate - b).abs();
    let se_err = (toy.coefficients[0].se - se).abs();
    ensure(se_err < 1e-8, format!("sandwich SE {} vs hand {se} (diff {se_err:e})", toy.coefficients[0].se))?;
    ensure(beta_err < 1e-8, format!("toy beta {} vs bisection {b}", toy.coefficients[0].estimate))?;
    ensure(monotone, "Newton log-likelihood decreased on some iteration")?;
    let t = within_budget(start, Duration::from_secs(5))?;
    Ok(format!("|beta - ln 3| = {ln3_err:.1e}, toy SE {se:.6} matched to {se_err:.1e}, LL traces monotone, {t}"))
}

// 6

fn permutations() -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let p = vec![a, b, c, d];
                    if (0..4).all(|x| p.contains(&x)) {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

fn brute_tau(a: &[usize], b: &[usize]) -> f64 {
    let pos = |r: &[usize], x: usize| r.iter().position(|&v| v == x).unwrap() as i32;
    let mut s = 0i32;
    for i in 0..4 {
        for j in i + 1..4 {
            s += ((pos(a, i) - pos(a, j)).signum()) * ((pos(b, i) - pos(b, j)).signum());
        }
    }
    s as f64 / 6.0
}

fn people(n: usize) -> Vec<UserProfile> {
    (0..n).map(|i| UserProfile::new(format!("p{i}"))).collect()
}

/// Base, DPFT, PPFT and Prompting replies carry 1, 3, 4 and 2 markers.
fn marker_agents(judge: UtilityJudge) -> Agents {
    let mk = |m: ModelId, n: usize| -> Arc<dyn Assistant> { Arc::new(ScriptedAssistant::with_markers(m.as_str(), "answer {n}", "*", n)) };
    Agents {
        assistants: [mk(ModelId::Base, 1), mk(ModelId::Dpft, 3), mk(ModelId::Ppft, 4), mk(ModelId::Prompting, 2)],
        user: Arc::new(ScriptedUser),
        judge: Arc::new(judge),
        exec: Exec::Sequential,
    }
}

const TRUTH: [&str; 4] = ["PPFT", "DPFT", "Prompting", "Base"];

fn simulate(participants: usize, turns: usize, judge: UtilityJudge, seed: u64) -> Result<Vec<Trial>, String> {
    let mut plan = ExperimentPlan::new(people(participants), Domain::ALL.to_vec(), Condition::SimDynamic, seed);
    plan.turns = TurnBudget::Fixed(turns);
    let out = run_experiment(&plan, &marker_agents(judge), None).map_err(|e| e.to_string())?;
    Ok(out.trials)
}

fn against_truth(trials: &[Trial]) -> Vec<MatchedTrialPair> {
    trials
        .iter()
        .map(|t| MatchedTrialPair {
            trial_id: t.id(),
            participant: t.participant.clone(),
            sim_rank: t.model_ranking().expect("ranked").iter().map(|m| m.to_string()).collect(),
            human_rank: TRUTH.iter().map(|s| s.to_string()).collect(),
        })
        .collect()
}

fn metric_oracles() -> Check {
    let start = Instant::now();
    let perms = permutations();
    let mut checked = 0;
    for a in &perms {
        for b in &perms {
            let tau = kendall_tau(a, b).map_err(|e| e.to_string())?;
            ensure(tau == brute_tau(a, b), format!("tau mismatch for {a:?} vs {b:?}"))?;
            for k in 1..=4 {
                ensure(top_k_match(a, b, k) == (a[..k] == b[..k]), format!("top-{k} mismatch for {a:?} vs {b:?}"))?;
            }
            checked += 1;
        }
    }
    ensure(checked == 576, format!("{checked} pairs"))?;
    let mut judge = UtilityJudge::new(UtilityFn::MarkerCount { marker: "\u{a7}".into() });
    judge.noise_scale = 1.0;
    let trials = simulate(2_500, 1, judge, 6)?;
    let pairs = against_truth(&trials);
    let opts = BootstrapOptions { iterations: 1, ..BootstrapOptions::default() };
    let tau = mean_tau(&pairs, &opts).map_err(|e| e.to_string())?.value;
    let top1 = top_k_accuracy(&pairs, 1);
    ensure(pairs.len() == 10_000, format!("{} trials", pairs.len()))?;
    ensure(tau.abs() < 0.02 && top1 > 0.23 && top1 < 0.27, format!("random judge tau {tau:.4}, top-1 {top1:.4}"))?;
    let t = within_budget(start, Duration::from_secs(60))?;
    Ok(format!("576 permutation pairs exact; random judge N=10000: mean tau {tau:+.4}, top-1 {top1:.4}, {t}"))
}

// 7

fn bdm() -> Check {
    let start = Instant::now();
    let one = |bid: f64, cost: f64| {
        let bids = BTreeMap::from([("A", bid)]);
        let costs = BTreeMap::from([("A", cost)]);
        resolve_selected(&bids, &costs, &"A").map_err(|e| e.to_string())
    };
    let no_sale = one(3.0, 4.0)?;
    ensure(!no_sale.transacted && no_sale.price_paid == 0.0, format!("bid 3, cost 4 gave {no_sale:?}"))?;
    let sale = one(8.0, 3.0)?;
    ensure(sale.transacted && sale.price_paid == 3.0, format!("bid 8, cost 3 gave {sale:?}"))?;
    let grid = uniform_grid(0.0, 10.0, 0.5);
    let r = verify_truthfulness(&grid, &grid, &uniform_costs(&grid));
    ensure(r.violations.is_empty(), format!("{} weak-dominance violations", r.violations.len()))?;
    let t = within_budget(start, Duration::from_secs(5))?;
    Ok(format!(
        "bid $3 vs cost $4: no sale, $0; bid $8 vs cost $3: sale at $3; {} grid comparisons, 0 violations, {t}",
        r.comparisons
    ))
}

// 8

fn end_to_end() -> Check {
    let start = Instant::now();
    let exact = simulate(30, 3, UtilityJudge::new(UtilityFn::MarkerCount { marker: "*".into() }), 8)?;
    let pairs = against_truth(&exact);
    let opts = BootstrapOptions { iterations: 200, seed: 8, ..BootstrapOptions::default() };
    let tau = mean_tau(&pairs, &opts).map_err(|e| e.to_string())?.value;
    let top1 = top_k_accuracy(&pairs, 1);
    ensure(tau == 1.0 && top1 == 1.0, format!("noise-free judge gave tau {tau}, top-1 {top1}"))?;

    let noisy = |bias: [f64; 4]| {
        let mut j = UtilityJudge::new(UtilityFn::MarkerCount { marker: "*".into() });
        j.position_bias = bias;
        j.noise_scale = 1.0;
        j
    };
    let fit_positions = |trials: &[Trial]| {
        position_bias_fit(&[SourceTrials { source: "sim".into(), trials }], "sim", false, &FitOptions::default())
            .map_err(|e| e.to_string())
    };
    let biased = fit_positions(&simulate(500, 1, noisy([1.0, 0.0, 0.0, 0.0]), 81)?)?;
    let d = biased.coefficient("position_D").ok_or("missing position_D")?;
    let (or, hi) = (d.odds_ratio.unwrap_or(f64::NAN), d.or_ci_high.unwrap_or(f64::NAN));
    ensure(or < 1.0 && hi < 1.0, format!("primacy bonus: OR(D vs A) {or:.3}, CI high {hi:.3}"))?;

    let unbiased = fit_positions(&simulate(500, 1, noisy([0.0; 4]), 82)?)?;
    let mut covers = Vec::new();
    for c in &unbiased.coefficients {
        let (lo, hi) = (c.or_ci_low.unwrap_or(f64::NAN), c.or_ci_high.unwrap_or(f64::NAN));
        ensure(lo <= 1.0 && 1.0 <= hi, format!("no bias: {} OR CI [{lo:.3}, {hi:.3}] excludes 1", c.name))?;
        covers.push(format!("{} [{lo:.2}, {hi:.2}]", c.name));
    }
    let monotone = [&biased, &unbiased].iter().all(|f| f.convergence.ll_trace.windows(2).all(|w| w[1] >= w[0]));
    ensure(monotone, "position fit log-likelihood decreased")?;
    let t = within_budget(start, Duration::from_secs(120))?;
    Ok(format!(
        "tau 1, top-1 1 over {} trials; primacy OR(D vs A) {or:.3} (CI high {hi:.3}) at N=2000; unbiased CIs {}; {t}",
        pairs.len(),
        covers.join(", ")
    ))
}

// 9

fn statistics_oracles() -> Check {
    let start = Instant::now();
    let rows: Vec<Vec<f64>> = [3.0, 7.0, 1.0, 9.0, 4.0].iter().map(|&v| vec![v, v]).collect();
    let icc = icc_2_1(&rows).map_err(|e| e.to_string())?;
    ensure(icc == 1.0, format!("ICC on duplicated columns = {icc}"))?;
    let bowker = mcnemar_bowker(&[vec![5, 2, 1], vec![2, 4, 3], vec![1, 3, 6]]).map_err(|e| e.to_string())?;
    ensure(bowker.statistic == 0.0, format!("Bowker chi-square on a symmetric table = {}", bowker.statistic))?;
    let x = [0.3, 1.2, 2.5, 0.7, 1.9];
    let same = ks_two_sample(&x, &x).map_err(|e| e.to_string())?;
    let apart = ks_two_sample(&x, &[10.0, 11.0, 12.5]).map_err(|e| e.to_string())?;
    ensure(same.d == 0.0 && apart.d == 1.0, format!("KS D identical {} disjoint {}", same.d, apart.d))?;
    let lev = levenshtein("kitten", "sitting");
    ensure(lev == 3, format!("levenshtein = {lev}"))?;
    let bh = fdr_adjust(&[0.01, 0.04, 0.03, 0.005]).map_err(|e| e.to_string())?;
    let expected = [0.02, 0.04, 0.04, 0.02];
    let bh_err = bh.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(bh_err < 1e-15, format!("BH adjusted {bh:?}, expected {expected:?}"))?;
    let t = within_budget(start, Duration::from_secs(5))?;
    Ok(format!("ICC 1, Bowker chi-square 0, KS D 0 and 1, Levenshtein 3, BH {bh:?}, {t}"))
}

// 10

fn data_replay() -> Outcome {
    let Some(path) = std::env::var_os("PREFSIM_PRISM_X_TRIALS") else {
        return Outcome::Skip("set PREFSIM_PRISM_X_TRIALS to a trial JSONL file to run".into());
    };
    let run = || -> Check {
        let data = ingest_prism_like(std::path::Path::new(&path)).map_err(|e| e.to_string())?;
        let outcome = filter_trials(&data.trials, FilterStrategy::Full);
        let names: Vec<String> = ModelId::ALL.iter().map(|m| m.to_string()).collect();
        let fit = fit_plackett_luce(&model_rankings(&outcome), &names, 0, &FitOptions::default()).map_err(|e| e.to_string())?;
        let expected = [0.22, 0.30, 0.31, 0.17];
        let worth_dev = fit.worths.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let sc = self_consistency(&data.trials, &BootstrapOptions { iterations: 200, ..BootstrapOptions::default() })
            .ok_or("no trial has both ratings and a ranking")?;
        let worths = fit.worths.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>().join("/");
        let detail = format!("worths {worths}, self-consistency tau {:.3}, top-1 {:.3}", sc.tau.value, sc.top1.value);
        ensure(worth_dev <= 0.01, format!("{detail}; worth deviation {worth_dev:.3}"))?;
        ensure((sc.tau.value - 0.57).abs() <= 0.02 && (sc.top1.value - 0.688).abs() <= 0.01, detail.clone())?;
        Ok(detail)
    };
    match run() {
        Ok(s) => Outcome::Pass(s),
        Err(s) => Outcome::Fail(s),
    }
}

fn main() {
    let checks: [(&str, fn() -> Check); 9] = [
        ("loss identities", loss_identities),
        ("gradient fidelity", gradient_fidelity),
        ("personalisation separation", personalisation_separation),
        ("Plackett-Luce recovery", plackett_luce_recovery),
        ("conditional logit closed form", conditional_logit_closed_form),
        ("metric oracles", metric_oracles),
        ("BDM", bdm),
        ("end-to-end pipeline", end_to_end),
        ("statistics oracles", statistics_oracles),
    ];
    let mut outcomes: Vec<(&str, Outcome)> = checks
        .iter()
        .map(|(name, f)| {
            let o = match std::panic::catch_unwind(f) {
                Ok(Ok(s)) => Outcome::Pass(s),
                Ok(Err(s)) => Outcome::Fail(s),
                Err(_) => Outcome::Fail("panicked".into()),
            };
            (*name, o)
        })
        .collect();
    outcomes.push(("data replay", data_replay()));
    let mut failed = 0;
    for (i, (name, o)) in outcomes.iter().enumerate() {
        let (tag, detail) = match o {
            Outcome::Pass(s) => ("PASS", s),
            Outcome::Fail(s) => {
                failed += 1;
                ("FAIL", s)
            }
            Outcome::Skip(s) => ("SKIP", s),
        };
        println!("{tag} criterion {} ({name}): {detail}", i + 1);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
