mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dcr", version, about = "Train, run and evaluate the dynamic chunk reader")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Write one JSON line of predicted answer per example.
    Predict(PredictArgs),
    /// Score predictions (or a checkpoint) against a dataset.
    Evaluate(EvaluateArgs),
    /// Report candidate recall, mean candidate count and a length histogram.
    ChunkStats(ChunkStatsArgs),
    /// Check backpropagated gradients against finite differences on a toy model.
    Gradcheck(GradcheckArgs),
    /// Write a seeded synthetic dataset and its embedding table.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// `key = value` training config; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    /// Held-out set for per-epoch EM/F1 and early stopping.
    #[arg(long)]
    dev: PathBuf,
    /// Whitespace-separated `word v1 ... vD` lines.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    embedding_dim: usize,
    /// Checkpoint directory; also receives `train_log.tsv` and `train_config.txt`.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config file and the seed environment variable.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides one config key, e.g. `--set hidden=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output JSONL file.
    #[arg(long)]
    out: PathBuf,
    /// Embedding file; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Predictions JSONL with `id` and `answer` fields.
    #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
    predictions: Option<PathBuf>,
    /// Predict with this checkpoint instead of reading predictions.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    embeddings: Option<PathBuf>,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
pub struct ChunkStatsArgs {
    #[arg(long)]
    data: PathBuf,
    /// `window` or `trie`.
    #[arg(long, default_value = "window")]
    mode: String,
    /// Longest enumerated chunk in window mode.
    #[arg(long, default_value_t = dcr::chunker::DEFAULT_WINDOW)]
    window: usize,
    /// Dataset whose answers build the trie; defaults to `--data`.
    #[arg(long)]
    trie_from: Option<PathBuf>,
    #[arg(long, default_value_t = dcr::chunker::DEFAULT_DEPTH_CAP)]
    depth_cap: usize,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 6)]
    passage_len: usize,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// `dot` or `cosine`.
    #[arg(long, default_value = "dot")]
    scoring: String,
    /// `raw` or `softmax`.
    #[arg(long, default_value = "raw")]
    attention: String,
    /// Negative control: use a wrong tanh derivative on the analytic side.
    #[arg(long, hide = true)]
    corrupt_backward: bool,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    examples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Writes `data.jsonl` and `embeddings.txt` here.
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::ChunkStats(a) => commands::chunk_stats(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
