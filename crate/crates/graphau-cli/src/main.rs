//! Command-line surface: preprocess, train, eval, bench, grid.
//!
//! Every command resolves its settings as defaults < config file < flags,
//! writes the merged snapshot to `<out-dir>/config.json`, and exits nonzero
//! with a one-line machine-readable `error category=... message=...` on
//! failure. Categories map to exit codes: config=2, io=3, data=4, limit=5,
//! numeric=6, internal=70.

mod commands;
mod settings;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "graphau",
    version,
    about = "Embedding trainer for implicit-feedback ranking: multi-hop graph alignment with uniformity regularization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read raw interactions, deduplicate, optionally k-core filter, split
    Preprocess(PreprocessArgs),
    /// Train embeddings and write checkpoint, train log and metrics
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation or test split
    Eval(EvalArgs),
    /// Time aggregated alignment against direct high-order alignment
    Bench(BenchArgs),
    /// Train over a hyperparameter grid and tabulate the results
    Grid(GridArgs),
}

#[derive(Args)]
pub struct CommonArgs {
    /// JSON settings file; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory for all outputs (fixed file names inside)
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cap internal parallelism (overrides the GRAPHAU_THREADS env var)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct DataArgs {
    /// Raw interaction file, one user/item pair per line
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Directory holding a split manifest written by `preprocess`
    #[arg(long, value_name = "DIR")]
    pub splits: Option<PathBuf>,
    /// tsv or csv
    #[arg(long)]
    pub format: Option<String>,
    /// Skip the first line of --data
    #[arg(long)]
    pub has_header: bool,
    /// Iterative k-core filtering before splitting (0 = off)
    #[arg(long)]
    pub k_core: Option<usize>,
    /// train,valid,test fractions, e.g. 0.6,0.2,0.2
    #[arg(long)]
    pub ratios: Option<String>,
    /// Split each user's interactions separately
    #[arg(long)]
    pub per_user_split: bool,
}

#[derive(Args)]
pub struct HyperArgs {
    /// graphau or bpr
    #[arg(long)]
    pub objective: Option<String>,
    /// Embedding dimension
    #[arg(long)]
    pub d: Option<usize>,
    /// Which layer feeds the uniformity terms (ablation switch)
    #[arg(long)]
    pub uniformity_order: Option<usize>,
    /// sq or l2
    #[arg(long)]
    pub uniformity_metric: Option<String>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub epochs_max: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    /// Epochs between validation evaluations (0 = never)
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Ranking cutoff
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_name = "DIR")]
    pub splits: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// valid or test
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub k: Option<usize>,
    /// Also report full-table uniformity of both embedding sets
    #[arg(long)]
    pub diagnostics: bool,
    #[arg(long)]
    pub uniformity_metric: Option<String>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Generate a synthetic power-law bipartite graph instead of reading data
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub synth_users: Option<usize>,
    #[arg(long)]
    pub synth_items: Option<usize>,
    #[arg(long)]
    pub synth_edges: Option<usize>,
    #[arg(long)]
    pub synth_exponent: Option<f64>,
    /// Largest layer count to compare
    #[arg(long)]
    pub l_max: Option<usize>,
    /// Timed epochs per configuration
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub frontier_cap: Option<usize>,
}

#[derive(Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Grid spec: single value, comma list, or start:end:step (inclusive)
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    /// Comma list of seeds; every grid point runs once per seed
    #[arg(long)]
    pub seeds: Option<String>,
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Preprocess(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Bench(a) => &a.common,
            Command::Grid(a) => &a.common,
        }
    }
}

fn category(e: &graphau::Error) -> (&'static str, i32) {
    use graphau::Error;
    match e {
        Error::Io { .. } => ("io", 3),
        Error::ParseRow { .. }
        | Error::EmptyDataset
        | Error::Checkpoint(_)
        | Error::VocabHashMismatch
        | Error::NoEvaluableUsers => ("data", 4),
        Error::BadRatios { .. } | Error::Config(_) => ("config", 2),
        Error::FrontierCap { .. } => ("limit", 5),
        Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } => ("numeric", 6),
        Error::DimMismatch { .. } | Error::EmptyBatch => ("internal", 70),
    }
}

fn init_threads(flag: Option<usize>) {
    let from_env = std::env::var("GRAPHAU_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = flag.or(from_env) {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("thread pool already initialized: {e}");
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            eprintln!("error category=config message=\"invalid command line\"");
            std::process::exit(2);
        }
    };
    init_threads(cli.command.common().threads);
    let result = match &cli.command {
        Command::Preprocess(args) => commands::preprocess(args),
        Command::Train(args) => commands::train_cmd(args),
        Command::Eval(args) => commands::eval_cmd(args),
        Command::Bench(args) => commands::bench_cmd(args),
        Command::Grid(args) => commands::grid_cmd(args),
    };
    if let Err(e) = result {
        let (cat, code) = category(&e);
        eprintln!("error category={cat} message={:?}", e.to_string());
        std::process::exit(code);
    }
}
