use std::path::PathBuf;

use clap::Args;
use prefsim::exec::Exec;
use prefsim::policy::{Checkpoint, PersonalizedPolicy, ToyPolicy, UserEmbeddingModel};
use prefsim::report::{Report, Table};
use prefsim::seed::derive_seed;
use prefsim::training::{dataset_users, pairwise_accuracy, train, InitialModel, Objective, PreferencePair, TrainingConfig};
use serde_json::json;

use crate::error::{CliError, Classify};
use crate::io::{out_dir, read_json, read_rows, write_file};
use crate::Global;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Preference pairs (JSONL: prompt, chosen, rejected, user).
    #[arg(long)]
    pairs: PathBuf,
    /// dpo or pdpo.
    #[arg(long, default_value = "pdpo")]
    objective: String,
    /// Training configuration (JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialisation.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Vocabulary size; defaults to the largest token id plus one.
    #[arg(long)]
    vocab: Option<usize>,
    /// Embedding width.
    #[arg(long, default_value_t = 4)]
    dim: usize,
    /// Number of shared user-token components.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Soft user tokens per user.
    #[arg(long, default_value_t = 2)]
    user_tokens: usize,
    /// Weight of the user-conditioned term.
    #[arg(long)]
    alpha: Option<f64>,
    /// Inverse temperature of the preference loss.
    #[arg(long)]
    beta: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

pub fn run(g: &Global, a: TrainArgs) -> Result<(), CliError> {
    let objective: Objective = a.objective.parse().invalid("--objective")?;
    let pairs: Vec<PreferencePair> = read_rows(&a.pairs)?;
    if pairs.is_empty() {
        return Err(CliError::invalid(format!("{} holds no pairs", a.pairs.display())));
    }
    for (i, p) in pairs.iter().enumerate() {
        p.validate().invalid(&format!("pair {}", i + 1))?;
    }
    let mut config: TrainingConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainingConfig::default(),
    };
    if let Some(s) = g.seed {
        config.seed = s;
    }
    config.alpha = a.alpha.unwrap_or(config.alpha);
    config.beta = a.beta.unwrap_or(config.beta);
    config.learning_rate = a.lr.unwrap_or(config.learning_rate);
    config.epochs = a.epochs.unwrap_or(config.epochs);
    config.batch_size = a.batch_size.unwrap_or(config.batch_size);
    config.validate().invalid("training configuration")?;

    let max_token = pairs.iter().flat_map(|p| p.prompt.iter().chain(&p.chosen).chain(&p.rejected)).copied().max().unwrap_or(0);
    let users = dataset_users(&pairs);
    let initial = match &a.init {
        Some(path) => {
            let ck = Checkpoint::load(path).invalid(&format!("cannot load {}", path.display()))?;
            match (objective, ck.users) {
                (Objective::Dpo, _) => InitialModel::Dpo(ck.policy),
                (Objective::Pdpo, Some(u)) => InitialModel::Pdpo(PersonalizedPolicy { policy: ck.policy, users: u }),
                (Objective::Pdpo, None) => return Err(CliError::invalid("pdpo from a checkpoint needs a user model in it")),
            }
        }
        None => {
            let vocab = a.vocab.unwrap_or(max_token + 1);
            let policy = ToyPolicy::init(vocab, a.dim, derive_seed(config.seed, &["policy-init"])).invalid("policy shape")?;
            match objective {
                Objective::Dpo => InitialModel::Dpo(policy),
                Objective::Pdpo => {
                    let u = UserEmbeddingModel::init(a.k, a.user_tokens, a.dim, &users, derive_seed(config.seed, &["users-init"]))
                        .invalid("user model shape")?;
                    InitialModel::Pdpo(PersonalizedPolicy { policy, users: u })
                }
            }
        }
    };
    let vocab = match &initial {
        InitialModel::Dpo(p) => p.vocab,
        InitialModel::Pdpo(pp) => pp.policy.vocab,
    };
    if max_token >= vocab {
        return Err(CliError::invalid(format!("token id {max_token} outside vocabulary of {vocab}")));
    }

    let outcome = train(&pairs, initial, &config, Exec::Parallel).runtime("training failed")?;
    let accuracy = pairwise_accuracy(&pairs, &outcome.policy, outcome.users.as_ref()).runtime("accuracy")?;
    let dir = out_dir(g.out.as_deref(), "train")?;
    let ck = Checkpoint::new(outcome.policy.clone(), outcome.users.clone());
    write_file(&dir.join("checkpoint.json"), &ck.to_json().runtime("serialize checkpoint")?)?;
    write_file(&dir.join("loss.csv"), &outcome.loss_csv())?;

    let mut report = Report::new("train");
    report.seed = Some(config.seed);
    let cfg_json = json!({ "config": config, "objective": objective, "dim": a.dim, "k": a.k, "user_tokens": a.user_tokens, "vocab": vocab });
    report.config_digest = Some(prefsim::seed::digest_hex(prefsim::json::to_line(&cfg_json).unwrap_or_default().as_bytes()));
    let mut t = Table::new("training", &["objective", "pairs", "users", "steps", "initial_loss", "final_loss", "pairwise_accuracy"]);
    let first = outcome.loss_trace.first().copied().unwrap_or(f64::NAN);
    let last = outcome.loss_trace.last().copied().unwrap_or(f64::NAN);
    t.push(vec![
        format!("{objective:?}").to_lowercase().into(),
        pairs.len().into(),
        users.len().into(),
        (outcome.loss_trace.len() - 1).into(),
        json!(first),
        json!(last),
        json!(accuracy),
    ]);
    report.tables.push(t);
    report.data = cfg_json;
    write_file(&dir.join("manifest.json"), &report.to_json())
}
