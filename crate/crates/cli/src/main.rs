//! `mixtopic`: simulate, train, predict and evaluate the supervised
//! multi-specialist topic model from the command line.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable that overrides `--seed` when set.
pub const SEED_ENV: &str = "MIXTOPIC_SEED";

#[derive(Debug, Parser)]
#[command(name = "mixtopic", version, about = "Supervised topic model over (code, specialist) tokens")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a labeled corpus and its ground truth from the generative model.
    Simulate(SimulateArgs),
    /// Fit the model and write it with its ELBO trace.
    Train(TrainArgs),
    /// Score patients with a fitted model.
    Predict(PredictArgs),
    /// Compute AUROC, AUPRC, held-out perplexity and topic recovery.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Number of patients.
    #[arg(long, default_value_t = 2500)]
    pub patients: usize,
    /// Number of diagnosis codes.
    #[arg(long, default_value_t = 750)]
    pub codes: usize,
    /// Number of specialists.
    #[arg(long, default_value_t = 48)]
    pub specialists: usize,
    /// Number of topics.
    #[arg(long)]
    pub topics: usize,
    /// Smallest number of tokens per patient.
    #[arg(long, default_value_t = 20)]
    pub tokens_min: usize,
    /// Largest number of tokens per patient.
    #[arg(long, default_value_t = 60)]
    pub tokens_max: usize,
    /// Topic-mixture concentration.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Specialist concentration.
    #[arg(long, default_value_t = 0.5)]
    pub iota: f64,
    /// Code concentration.
    #[arg(long, default_value_t = 0.05)]
    pub zeta: f64,
    /// Prior precision of the regression weights.
    #[arg(long, default_value_t = 0.25)]
    pub tau: f64,
    /// Random seed (overridden by MIXTOPIC_SEED).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for events.tsv, labels.tsv, truth.json and manifest.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Supervised,
    Unsupervised,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Events TSV: patient_id, code, specialist.
    #[arg(long)]
    pub events: PathBuf,
    /// Labels TSV: patient_id, 0|1.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Number of topics.
    #[arg(long)]
    pub topics: usize,
    /// Stop once the relative ELBO change falls below this.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = Mode::Supervised)]
    pub mode: Mode,
    /// Upper bound on sweeps (or sweep-equivalents).
    #[arg(long, default_value_t = 500)]
    pub max_sweeps: usize,
    /// Use stochastic minibatch updates.
    #[arg(long)]
    pub stochastic: bool,
    /// Minibatch size for --stochastic.
    #[arg(long, default_value_t = 256, requires = "stochastic")]
    pub batch: usize,
    /// Step-size decay exponent for --stochastic, in (0.5, 1].
    #[arg(long, default_value_t = 0.9, requires = "stochastic")]
    pub kappa: f64,
    /// Step-size delay for --stochastic.
    #[arg(long, default_value_t = 1.0, requires = "stochastic")]
    pub delay: f64,
    /// Prior precision of the regression weights.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Worker threads; above 1 switches to sweep-synchronous updates.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Map every specialist to one, reducing the model to LDA over codes.
    #[arg(long)]
    pub specialist_collapse: bool,
    /// Random seed (overridden by MIXTOPIC_SEED).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for model.json, trace.csv and manifest.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Fitted model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Events TSV of the patients to score.
    #[arg(long)]
    pub events: PathBuf,
    /// Fold-in rounds per patient.
    #[arg(long, default_value_t = 50)]
    pub fold_in_iters: usize,
    /// Collapse specialists as at training time.
    #[arg(long)]
    pub specialist_collapse: bool,
    /// Output TSV: patient_id, probability, label. The manifest goes to
    /// `<out>.manifest.json`.
    #[arg(long, default_value = "predictions.tsv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions TSV written by `predict`.
    #[arg(long, requires = "labels")]
    pub predictions: Option<PathBuf>,
    /// Labels TSV holding the true outcomes.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Fitted model JSON, for perplexity and topic recovery.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Held-out events TSV for perplexity.
    #[arg(long, requires = "model")]
    pub events: Option<PathBuf>,
    /// Ground-truth JSON written by `simulate`, for topic recovery.
    #[arg(long, requires = "model")]
    pub truth: Option<PathBuf>,
    /// Fold-in rounds per held-out patient.
    #[arg(long, default_value_t = 50)]
    pub fold_in_iters: usize,
    /// Collapse specialists as at training time.
    #[arg(long)]
    pub specialist_collapse: bool,
    /// Also write roc_curve.csv and pr_curve.csv next to the metrics.
    #[arg(long)]
    pub curves: bool,
    /// Seed for breaking score ties in the precision-recall ordering
    /// (overridden by MIXTOPIC_SEED).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics JSON. The manifest goes to `<out>.manifest.json`.
    #[arg(long, default_value = "metrics.json")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
