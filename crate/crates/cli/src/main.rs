mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Multi-hop QA with dynamically fused entity graphs.
#[derive(Parser, Debug)]
#[command(name = "dfgn", version = commands::VERSION)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic train/dev set and the matching gazetteer.
    GenData(GenDataArgs),
    /// Train the paragraph selector and the reader.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Extract top-k reasoning paths and ESP metrics.
    Trace(TraceArgs),
    /// Per-example entity graph statistics.
    GraphStats(GraphStatsArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Seed; falls back to DFGN_SEED, then to the config.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML or JSON file overriding default hyperparameters.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n_train: usize,
    #[arg(long, default_value_t = 500)]
    n_dev: usize,
    /// TOML file with generator settings.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training set JSON.
    #[arg(long)]
    data: PathBuf,
    /// Dev set JSON; defaults to dev.json next to the training set when present.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Entity surfaces, one per line; defaults to gazetteer.txt next to the data.
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Metrics CSV.
    #[arg(long)]
    report: PathBuf,
    /// Directory for the manifest, selection report and predictions; defaults to the report's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated path counts.
    #[arg(long, default_value = "1,2,5,10")]
    k: String,
    #[arg(long, default_value = "trace")]
    out: PathBuf,
    /// Also write an SVG chart of ESP against k.
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args, Debug)]
struct GraphStatsArgs {
    #[arg(long)]
    data: PathBuf,
    /// Use the checkpoint's selector, gazetteer and max_nodes; otherwise all paragraphs are kept.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    gazetteer: Option<PathBuf>,
    #[arg(long, default_value = "graph-stats")]
    out: PathBuf,
    #[arg(long)]
    max_nodes: Option<usize>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a, &argv),
        Command::Train(a) => commands::train(a, &argv),
        Command::Eval(a) => commands::eval(a, &argv),
        Command::Trace(a) => commands::trace(a, &argv),
        Command::GraphStats(a) => commands::graph_stats(a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
