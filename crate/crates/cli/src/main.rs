use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod analysis;
mod bdm;
mod error;
mod io;
mod score;
mod simulate;
mod train;

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "prefsim", version, about = "Preference training, simulated-user evaluation and choice-model statistics")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections (results do not depend on it).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log backend requests and responses (credentials redacted).
    #[arg(long, global = true)]
    pub trace: bool,
    /// Output file, or directory for `train` and `simulate`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Global {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a toy policy with DPO or P-DPO on preference pairs.
    Train(train::TrainArgs),
    /// Run a simulated experiment.
    Simulate(simulate::SimulateArgs),
    /// Ranking agreement between simulated and human judgements.
    Evaluate(analysis::EvaluateArgs),
    /// Fit choice models to trial data.
    Fit(analysis::FitArgs),
    /// Resolve or verify the willingness-to-pay auction.
    Bdm(bdm::BdmArgs),
    /// Score conversation traits.
    Score(score::ScoreArgs),
    /// Render a JSON report as text tables.
    Report(analysis::ReportArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    prefsim::exec::with_jobs(g.jobs, || match cli.command {
        Command::Train(a) => train::run(&g, a),
        Command::Simulate(a) => simulate::run(&g, a),
        Command::Evaluate(a) => analysis::evaluate(&g, a),
        Command::Fit(a) => analysis::fit(&g, a),
        Command::Bdm(a) => bdm::run(&g, a),
        Command::Score(a) => score::run(&g, a),
        Command::Report(a) => analysis::report(&g, a),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let mut logger = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"));
    if cli.global.trace {
        logger.filter_module("prefsim::trace", log::LevelFilter::Info);
    }
    logger.init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.code())
        }
    }
}
