mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "fignn", version, about = "Fi-GNN click-through-rate models: train, evaluate, predict, explain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count tokens in a TSV file and write the vocabulary as JSON.
    BuildVocab {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_count: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its best checkpoint and per-epoch history.
    Train(TrainArgs),
    /// Score a labelled TSV file with a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Vocabulary the data is expected to use; must match the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Print only the JSON report.
        #[arg(long)]
        json: bool,
    },
    /// Write `line,probability` rows for every line of a TSV file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export edge-attention heat maps and node weights as CSV.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = ExplainMode::Global)]
        mode: ExplainMode,
        /// Instances explained individually in case mode.
        #[arg(long, default_value_t = fignn::explain::DEFAULT_CASES)]
        cases: usize,
        #[arg(long = "out", alias = "out-dir")]
        out_dir: PathBuf,
    },
    /// Train every combination of the given grids and tabulate the results.
    Sweep {
        #[command(flatten)]
        base: TrainArgs,
        #[arg(long, value_delimiter = ',')]
        steps_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        state_dim_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        heads_grid: Vec<usize>,
        /// Also write the table as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write the XOR interaction task as TSV plus a schema file.
    GenerateSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        schema_out: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        instances: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExplainMode {
    Global,
    Case,
}

#[derive(clap::Args, Clone, Default)]
struct TrainArgs {
    /// JSON run configuration; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    min_count: Option<u64>,
    /// lr, fm or fignn.
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated: no-edge-attention, no-edge-transform, no-residual,
    /// binary-adjacency (or W, T, R, E).
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    state_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Checkpoint path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    history: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FIGNN_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildVocab {
            data,
            schema,
            min_count,
            out,
        } => commands::build_vocab(&data, &schema, min_count, &out),
        Command::Train(args) => commands::train(&args),
        Command::Evaluate {
            checkpoint,
            data,
            vocab,
            json,
        } => commands::evaluate(&checkpoint, &data, vocab.as_deref(), json),
        Command::Predict { checkpoint, data, out } => commands::predict(&checkpoint, &data, out.as_deref()),
        Command::Explain {
            checkpoint,
            data,
            mode,
            cases,
            out_dir,
        } => commands::explain(&checkpoint, &data, matches!(mode, ExplainMode::Case), cases, &out_dir),
        Command::Sweep {
            base,
            steps_grid,
            state_dim_grid,
            heads_grid,
            report,
        } => commands::sweep(&base, &steps_grid, &state_dim_grid, &heads_grid, report.as_deref()),
        Command::GenerateSynthetic {
            out,
            schema_out,
            instances,
            noise,
            seed,
        } => commands::generate_synthetic(&out, &schema_out, instances, noise, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
