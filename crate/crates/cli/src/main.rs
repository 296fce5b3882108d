//! `aga`: build TCoL tables, train, evaluate, gradient-check and sweep the
//! adaptive gate attention classifier.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad input or configuration.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "aga",
    version,
    about = "Adaptive gate attention text classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the TCoL table and vocabulary of a training file.
    BuildTcol {
        #[arg(long)]
        train: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a train/test pair, or cross-validate one corpus.
    Train(TrainArgs),
    /// Finite-difference check of every operation and the full forward pass.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Corrupt the backward pass of one operation (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Train one run per dropout cell and merge the curves.
    DropoutSweep {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',', default_value = "vanilla,leaky,none")]
        kinds: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "10,500,1000,10000")]
        c_list: Vec<f64>,
    },
    /// Accuracy and macro-F1 of a checkpoint on a labeled file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Defaults to the vocabulary recorded next to the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Defaults to the TCoL table recorded next to the checkpoint.
        #[arg(long)]
        tcol: Option<PathBuf>,
    },
    /// Write the seeded synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        sentences: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        /// Also write frozen-embedding vectors of this dimension in which
        /// all cue words nearly coincide.
        #[arg(long)]
        embedding_dim: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        embedding_noise: f64,
    },
    /// Welch (or paired) t-test between the runs of two reports.
    Ttest {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "accuracy")]
        metric: String,
        #[arg(long)]
        paired: bool,
    },
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    /// Flat `key=value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Whole corpus, for cross-validation.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    extractor: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    c_sup: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    /// Word vectors as `word v1 ... vk` lines.
    #[arg(long)]
    embedding_file: Option<PathBuf>,
    /// Replace the statistics branch by zeros.
    #[arg(long)]
    no_gi: bool,
    /// Any other key, as `key=value`; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    /// A check ran and failed (exit 1).
    Check(String),
    /// Input, configuration or I/O error (exit 2).
    Input(String),
}

impl From<aga_core::Error> for Failure {
    fn from(e: aga_core::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildTcol { train, out } => commands::build_tcol(&train, &out),
        Command::Train(args) => commands::train(&args),
        Command::Gradcheck { seed, inject_fault } => commands::gradcheck(seed, inject_fault),
        Command::DropoutSweep {
            train,
            kinds,
            c_list,
        } => commands::dropout_sweep(&train, &kinds, &c_list),
        Command::Eval {
            checkpoint,
            test,
            vocab,
            tcol,
        } => commands::eval(&checkpoint, &test, vocab.as_deref(), tcol.as_deref()),
        Command::Synth {
            out,
            sentences,
            seed,
            test_fraction,
            embedding_dim,
            embedding_noise,
        } => commands::synth(
            &out,
            sentences,
            seed,
            test_fraction,
            embedding_dim,
            embedding_noise,
        ),
        Command::Ttest {
            a,
            b,
            metric,
            paired,
        } => commands::ttest(&a, &b, &metric, paired),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
