use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use prefsim::agents::{Assistant, ScriptedAssistant, ScriptedUser, UtilityFn, UtilityJudge};
use prefsim::exec::Exec;
use prefsim::experiment::{run_experiment, Agents, Condition, ExperimentPlan, TurnBudget};
use prefsim::metrics::{mean_tau, BootstrapOptions, MatchedTrialPair};
use prefsim::model::{Domain, ModelId, UserProfile};
use prefsim::policy::{PersonalizedPolicy, ToyPolicy, UserEmbeddingModel};
use prefsim::training::{pdpo_loss_grad, PreferencePair};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn pairs() -> Vec<MatchedTrialPair> {
    let names = ["Base", "DPFT", "PPFT", "Prompting"];
    (0..2_000)
        .map(|i| {
            let mut sim = names.to_vec();
            sim.rotate_left(i % 4);
            let mut human = names.to_vec();
            human.rotate_left((i / 4) % 4);
            MatchedTrialPair {
                trial_id: format!("t{i}"),
                participant: format!("p{}", i % 100),
                sim_rank: sim.iter().map(|s| s.to_string()).collect(),
                human_rank: human.iter().map(|s| s.to_string()).collect(),
            }
        })
        .collect()
}

fn bootstrap(c: &mut Criterion) {
    let data = pairs();
    let mut g = c.benchmark_group("bootstrap_mean_tau");
    for (name, exec) in MODES {
        let opts = BootstrapOptions { iterations: 1_000, seed: 1, exec, ..BootstrapOptions::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| mean_tau(&data, &opts).unwrap()));
    }
    g.finish();
}

fn pdpo_gradient(c: &mut Criterion) {
    let users: Vec<String> = (0..32).map(|u| format!("u{u}")).collect();
    let batch: Vec<PreferencePair> = (0..512)
        .map(|i| PreferencePair {
            prompt: vec![1 + i % 20, 2 + i % 7, 3],
            chosen: vec![4 + i % 11, 5],
            rejected: vec![6 + i % 13, 7, 8],
            user: users[i % users.len()].clone(),
        })
        .collect();
    let policy = ToyPolicy::init(32, 16, 1).unwrap();
    let model = PersonalizedPolicy { policy: policy.clone(), users: UserEmbeddingModel::init(4, 3, 16, &users, 1).unwrap() };
    let mut g = c.benchmark_group("pdpo_batch_gradient");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pdpo_loss_grad(&batch, &model, &policy, 0.5, 0.5, exec).unwrap())
        });
    }
    g.finish();
}

fn experiment(c: &mut Criterion) {
    let people: Vec<UserProfile> = (0..25).map(|i| UserProfile::new(format!("p{i}"))).collect();
    let mut plan = ExperimentPlan::new(people, Domain::ALL.to_vec(), Condition::SimDynamic, 3);
    plan.turns = TurnBudget::Fixed(5);
    let mut g = c.benchmark_group("simulated_experiment");
    g.sample_size(20);
    for (name, exec) in MODES {
        let assistants = ModelId::ALL.map(|m| {
            Arc::new(ScriptedAssistant::with_markers(m.as_str(), "reply {n}", "*", m.index() + 1)) as Arc<dyn Assistant>
        });
        let agents = Agents {
            assistants,
            user: Arc::new(ScriptedUser),
            judge: Arc::new(UtilityJudge::new(UtilityFn::MarkerCount { marker: "*".into() })),
            exec,
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_experiment(&plan, &agents, None).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bootstrap, pdpo_gradient, experiment);
criterion_main!(benches);
