use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "barnet", version = crate::VERSION, about = "Network estimation for thinned Bernoulli autoregressive event data")]
pub struct Cli {
    /// Seed for every stochastic step (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; defaults to the number of cores. Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a BAR process from a model JSON.
    Simulate(SimulateArgs),
    /// Thin an event matrix with Bernoulli(p) masks.
    Corrupt(CorruptArgs),
    /// Bin raw incident records into an event matrix.
    Ingest(IngestArgs),
    /// Fit a network to an event matrix.
    Fit(FitArgs),
    /// One-step-ahead event probabilities by particle filtering.
    Filter(FilterArgs),
    /// Simulation studies and hold-out evaluations.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// NetworkModel JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Number of time steps.
    #[arg(long = "T", alias = "t", value_name = "T")]
    pub steps: usize,
    /// Steps simulated and discarded before the first output step.
    #[arg(long, default_value_t = 0)]
    pub burn_in: usize,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    /// Event matrix CSV.
    pub input: PathBuf,
    /// Observation probability: a number or a per-node CSV (node_id,p).
    #[arg(long)]
    pub p: String,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Incident CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Keep rows whose primary type equals this (case-insensitive).
    #[arg(long)]
    pub type_filter: Option<String>,
    /// Bin width in days.
    #[arg(long, default_value_t = 7.0)]
    pub bin_width: f64,
    /// Keep the k nodes with the most records.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// First bin start (YYYY-MM-DD or YYYY-MM-DDTHH:MM:SS); default is the
    /// Monday before the first record.
    #[arg(long)]
    pub origin: Option<String>,
    /// Number of bins; default covers the last record.
    #[arg(long)]
    pub n_bins: Option<usize>,
    /// Also write a train/test split with the training part thinned.
    #[arg(long, requires = "test_bins")]
    pub train_bins: Option<usize>,
    #[arg(long, requires = "train_bins")]
    pub test_bins: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub mask_p: f64,
    #[arg(long, default_value = "date")]
    pub date_column: String,
    #[arg(long, default_value = "primary_type")]
    pub type_column: String,
    #[arg(long, default_value = "community_area")]
    pub node_column: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossKind {
    Complete,
    Truncated,
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    Zero,
    Random,
    Warm,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Event matrix CSV (observed events for the unbiased loss).
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "unbiased")]
    pub loss: LossKind,
    /// Taylor degree for the truncated and unbiased losses.
    #[arg(long, default_value_t = 2)]
    pub q: usize,
    /// Estimated observation probability: a number or a per-node CSV.
    #[arg(long, default_value = "1")]
    pub p_hat: String,
    /// Penalty: "auto" (0.75 / sqrt(T - 1)) or a number.
    #[arg(long, default_value = "auto", conflicts_with = "lambda_theory")]
    pub lambda: String,
    /// Theory-form penalty with this constant.
    #[arg(long)]
    pub lambda_theory: Option<f64>,
    /// Also fit a per-node intercept.
    #[arg(long)]
    pub intercept: bool,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step_init: f64,
    #[arg(long, default_value_t = 0.5)]
    pub backtrack: f64,
    #[arg(long, value_enum, default_value = "zero")]
    pub init: InitKind,
    /// Model JSON for --init warm.
    #[arg(long, required_if_eq("init", "warm"))]
    pub warm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// NetworkModel JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Observed event matrix CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Observation probability: a number or a per-node CSV.
    #[arg(long, default_value = "1")]
    pub p: String,
    #[arg(long, default_value_t = 1000)]
    pub particles: usize,
    #[arg(long, default_value_t = 0.5)]
    pub resample_threshold: f64,
    /// Divide the expected total by this (the naive thinning correction).
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Run a named experiment: mse_vs_T, robustness, truncation, holdout, filter_eval.
    Run(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    pub name: String,
    /// JSON object overriding preset fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from the published grid sizes instead of the desk preset.
    #[arg(long)]
    pub paper_scale: bool,
    /// Event matrix CSV replacing the simulated network (holdout, filter_eval).
    #[arg(long)]
    pub data: Option<PathBuf>,
}
