//! The `morphtag` command line: synthetic data, training, transfer,
//! evaluation, prediction, attention export, corpus statistics and k-fold
//! splitting.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::Result;
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "morphtag", version, about = "Code-switched sequence tagging with attention over character n-grams")]
pub struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic code-switched corpus.
    Synth(SynthArgs),
    /// Train a tagger from scratch.
    Train(RunArgs),
    /// Train a tagger on top of a pretrained encoder.
    Transfer(RunArgs),
    /// Score a checkpoint on a labelled corpus.
    Eval(EvalArgs),
    /// Tag a corpus and write the labels in CoNLL form.
    Predict(PredictArgs),
    /// Export per-token attention weights as JSON lines.
    AttnExport(AttnArgs),
    /// Label distributions, utterance classes and code-mixing index.
    Stats(StatsArgs),
    /// Split a corpus into k train/dev/test folds.
    Kfold(KfoldArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// TOML file with synthetic spec fields; `stems = N` regenerates the
    /// demo inventory with N stems per language.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long)]
    pub switch_prob: Option<f64>,
    #[arg(long)]
    pub stems: Option<usize>,
    /// lid or pos.
    #[arg(long)]
    pub task: Option<String>,
}

/// Flags shared by `train` and `transfer`. Precedence: defaults, then the
/// config file, then `--experiment`, then the remaining flags in the order
/// listed, then `--set`.
#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    /// TOML config with optional sections encoder, tagger, train, data, paths.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoint, metrics log and resolved config.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ablation rung: 1.2, 2.1, 2.2, 2.3, 3.1, 3.2 or 3.3.
    #[arg(long)]
    pub experiment: Option<String>,
    /// maxpool, attn, posattn or poshierattn.
    #[arg(long)]
    pub pooling: Option<String>,
    #[arg(long)]
    pub no_secondary: bool,
    #[arg(long)]
    pub no_static: bool,
    #[arg(long)]
    pub no_concat: bool,
    /// none, frozen or trainable.
    #[arg(long)]
    pub transfer: Option<String>,
    /// Enable gradual unfreezing with discriminative rates.
    #[arg(long)]
    pub unfreeze: bool,
    /// plateau or stlr.
    #[arg(long)]
    pub scheduler: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// lid, pos or ner.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Static word embeddings, in text format (repeatable).
    #[arg(long)]
    pub embeddings: Vec<PathBuf>,
    /// Checkpoint whose encoder is reused by `transfer`.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Any config key, e.g. `--set train.beta=0.5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Score the gold labels against themselves, skipping the model.
    #[arg(long)]
    pub gold_as_pred: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One token per line (extra columns ignored), blank line between sentences.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AttnArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Draw every position embedding at random, seeded per sentence.
    #[arg(long, value_name = "SEED")]
    pub shuffle_positions: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    /// Corpus files (repeatable); each becomes one split in the report.
    #[arg(long, required = true)]
    pub corpus: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value = "lid")]
    pub task: String,
    #[arg(long)]
    pub scheme_file: Option<PathBuf>,
    /// Entity types for a BIO scheme (repeatable).
    #[arg(long)]
    pub entity_type: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct KfoldArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "lid")]
    pub task: String,
    #[arg(long)]
    pub scheme_file: Option<PathBuf>,
    #[arg(long)]
    pub entity_type: Vec<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a, false),
        Command::Transfer(a) => commands::train(&a, true),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::AttnExport(a) => commands::attn_export(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Kfold(a) => commands::kfold(&a),
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code: 0 on success, 2 for input or configuration errors, 3
/// for numeric failures.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
