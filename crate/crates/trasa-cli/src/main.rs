//! `trasa` — session-based next-item recommendation from the command line.
//!
//! Subcommands cover the full workflow: `synthesize` writes a synthetic
//! event log, `preprocess` turns any event log into training files, `train`
//! fits a model and saves a checkpoint, `eval` reports ranking metrics,
//! `recommend` scores one session, and `gradcheck` verifies the gradient
//! engine with finite differences.
//!
//! Every knob lives in a flat TOML file passed via `--config`; individual
//! flags override file values. All outputs are structured `key=value` text.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "trasa",
    version,
    about = "Session-based next-item recommendation with relation-aware attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a raw event log into train/valid/test instance files, a
    /// vocabulary, and a stats summary.
    Preprocess(PreprocessArgs),
    /// Train a model on preprocessed files and save the best checkpoint.
    Train(Box<TrainArgs>),
    /// Score a checkpoint on one split of a preprocessed dataset.
    Eval(EvalArgs),
    /// Print the top-K next-item suggestions for one session.
    Recommend(RecommendArgs),
    /// Verify analytic gradients against finite differences (64-bit).
    Gradcheck(GradcheckArgs),
    /// Write a synthetic event log for experiments and tests.
    Synthesize(SynthesizeArgs),
}

#[derive(clap::Args)]
struct PreprocessArgs {
    /// Raw event log: delimiter-separated (session, item, timestamp) rows.
    #[arg(long)]
    input: PathBuf,
    /// Directory for the processed files (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    /// Flat TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Minimum total occurrences an item needs to be kept.
    #[arg(long)]
    min_support: Option<usize>,
    /// Chronologically final fraction of sessions held out for testing.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Fraction of the remaining sessions held out for validation.
    #[arg(long)]
    valid_fraction: Option<f64>,
    /// Whether to expand each session into all prefix instances.
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    /// Field separator: a single character or the word "tab".
    #[arg(long)]
    delimiter: Option<String>,
    /// Header handling: auto, present, or absent.
    #[arg(long)]
    header: Option<String>,
    /// Session column: zero-based index or header name.
    #[arg(long)]
    session_col: Option<String>,
    /// Item column: zero-based index or header name.
    #[arg(long)]
    item_col: Option<String>,
    /// Timestamp column: zero-based index or header name.
    #[arg(long)]
    time_col: Option<String>,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Directory produced by `preprocess`.
    #[arg(long)]
    data_dir: PathBuf,
    /// Where to save the trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional path for the epoch-by-epoch training log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Flat TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter precision: f32 or f64.
    #[arg(long)]
    dtype: Option<String>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    ffn_inner: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    max_positions: Option<usize>,
    #[arg(long)]
    path_cap: Option<usize>,
    /// Structural variant: full, wo-pos, wo-rel-pos, or wo-san.
    #[arg(long)]
    ablation: Option<String>,
    /// Session readout: soft-attention, san, sum, or graph.
    #[arg(long)]
    readout: Option<String>,
    /// Objective: full-bce or target-ce.
    #[arg(long)]
    loss_mode: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    lr_decay_every: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stop once training-set P@1 reaches this value.
    #[arg(long)]
    target_train_p1: Option<f64>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory produced by `preprocess`.
    #[arg(long)]
    data_dir: PathBuf,
    /// Which split to score: train, valid, or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Comma-separated ranking cutoffs.
    #[arg(long, default_value = "20")]
    ks: String,
}

#[derive(clap::Args)]
struct RecommendArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary file written by `preprocess`.
    #[arg(long)]
    vocab: PathBuf,
    /// The session so far, as comma-separated raw item ids.
    #[arg(long)]
    session: String,
    /// How many suggestions to print.
    #[arg(long, default_value_t = 20)]
    k: usize,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    /// Finite-difference step size.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
}

#[derive(clap::Args)]
struct SynthesizeArgs {
    /// Corpus kind: markov or long-range.
    #[arg(long)]
    kind: String,
    /// Output event-log path (tab-separated).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// markov only: shortest session length.
    #[arg(long)]
    min_len: Option<usize>,
    /// markov only: longest session length.
    #[arg(long)]
    max_len: Option<usize>,
    /// markov only: Dirichlet concentration of transition rows.
    #[arg(long)]
    concentration: Option<f64>,
    /// long-range only: fixed session length.
    #[arg(long)]
    length: Option<usize>,
    /// long-range only: distance from the predictive item to the end.
    #[arg(long)]
    gap: Option<usize>,
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Preprocess(args) => commands::preprocess(args),
        Command::Train(args) => commands::train_cmd(args),
        Command::Eval(args) => commands::eval_cmd(args),
        Command::Recommend(args) => commands::recommend(args),
        Command::Gradcheck(args) => commands::gradcheck_cmd(args),
        Command::Synthesize(args) => commands::synthesize(args),
    };
    commands::exit_with(result);
}
