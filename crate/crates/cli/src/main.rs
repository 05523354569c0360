mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use topoprobe::ingest::MeasurementMode;
use topoprobe::probe::{TargetMode, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "topoprobe",
    version,
    about = "Tree-depth probing of contextual embeddings"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// File of `key = value` lines, read as flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Write output here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Nearest and farthest admissible depth sequences for predicted depths.
    Oracle(OracleArgs),
    /// Write a synthetic corpus with a planted probe.
    Synth(SynthArgs),
    /// Train one probe.
    Train(TrainArgs),
    /// Evaluate probes on one slice.
    Eval(EvalArgs),
    /// Train and evaluate probes on every slice.
    Sweep(SweepArgs),
    /// Regularization weight from a task loss and x_ssp.
    Lambda(LambdaArgs),
    /// Range-grouping tables from a metrics CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Solver {
    Greedy,
    Exact,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Predicted depths.
    #[arg(allow_negative_numbers = true)]
    pub values: Vec<f64>,

    /// Draw this many random predicted depths instead.
    #[arg(long, value_name = "LEN", conflicts_with = "values")]
    pub random: Option<usize>,

    /// `exact` adds the exhaustive nearest and farthest sequences.
    #[arg(long, value_enum, default_value_t = Solver::Exact)]
    pub solver: Solver,

    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub sentences: usize,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    /// Rank of the planted matrix.
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = topoprobe::geometry::DEFAULT_EPSILON_SCALE)]
    pub epsilon_scale: f64,
    /// Embedding file to write.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Depth annotations to write as JSON lines.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Also save the planted matrix as a probe checkpoint.
    #[arg(long)]
    pub planted: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Hyper {
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().optimizer_epsilon)]
    pub optimizer_epsilon: f64,
    #[arg(long, default_value_t = TrainConfig::default().weight_decay)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().warmup_fraction)]
    pub warmup_fraction: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().init_range)]
    pub init_range: f64,
    /// Probe rank; half the embedding dimension by default.
    #[arg(long)]
    pub probe_rank: Option<usize>,
}

impl Hyper {
    pub fn config(&self, seed: u64, target_mode: TargetMode) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            optimizer_epsilon: self.optimizer_epsilon,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            warmup_fraction: self.warmup_fraction,
            batch_size: self.batch_size,
            init_range: self.init_range,
            seed,
            target_mode,
            rank: self.probe_rank,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Inputs {
    /// Embedding file.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Gold depths, CoNLL-U or JSON lines (`.jsonl`).
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Measurement mode.
    #[arg(long, default_value = "e1")]
    pub mode: MeasurementMode,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, default_value = "supervised")]
    pub target: TargetMode,
    #[command(flatten)]
    pub hyper: Hyper,
    /// Where to save the trained probe.
    #[arg(long)]
    pub probe_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Probe used for every metric unless overridden.
    #[arg(long)]
    pub probe: Option<PathBuf>,
    #[arg(long)]
    pub ssp_probe: Option<PathBuf>,
    #[arg(long)]
    pub essp_probe: Option<PathBuf>,
    #[arg(long)]
    pub supervised_probe: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Solver::Greedy)]
    pub solver: Solver,
    /// Slice index recorded in the report.
    #[arg(long, default_value_t = 0)]
    pub slice: usize,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Embedding files of slices M_0, M_1, ... in order.
    #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
    pub embeddings: Vec<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long, default_value = "e1")]
    pub mode: MeasurementMode,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long, value_enum, default_value_t = Solver::Greedy)]
    pub solver: Solver,
    /// Save the trained probes here.
    #[arg(long)]
    pub probe_dir: Option<PathBuf>,
    #[command(flatten)]
    pub edges: Edges,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct Edges {
    /// Bin edges for grouping by x_ssp.
    #[arg(long, value_delimiter = ',', default_values_t = topoprobe::report::SSP_EDGES)]
    pub ssp_edges: Vec<f64>,
    /// Bin edges for grouping by x_essp.
    #[arg(long, value_delimiter = ',', default_values_t = topoprobe::report::ESSP_EDGES)]
    pub essp_edges: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct LambdaArgs {
    #[arg(long)]
    pub task_loss: f64,
    #[arg(long)]
    pub x_ssp: f64,
    /// Target ratio of regularization to task loss.
    #[arg(long, default_value_t = 0.1)]
    pub ratio: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// CSV with slice, x_ssp, x_essp and optionally x_sp_true columns.
    #[arg(long)]
    pub metrics: PathBuf,
    #[command(flatten)]
    pub edges: Edges,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

fn main() -> ExitCode {
    let cmd = Cli::command();
    let args = match config::expand_args(&cmd, std::env::args_os().collect()) {
        Ok(a) => a,
        Err(config::ConfigError(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match cmd
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io_or_format() { 1 } else { 2 })
        }
    }
}
