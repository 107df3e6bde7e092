//! `ulkit`: data generation, training, evaluation and decoding from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or model error.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ulkit_core::decoding::Strategy;
use ulkit_core::objectives::Mode;

#[derive(Parser, Debug)]
#[command(name = "ulkit", version, about = "Unlikelihood training toolkit for dialogue generation")]
struct Cli {
    /// Flat `key = value` config file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Aligned tables instead of CSV.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus as JSONL splits.
    GenData(GenDataArgs),
    /// Train a model and write final and best-validation checkpoints.
    Train(TrainArgs),
    /// Perplexity, repetition, class fractions and selection accuracy as CSV.
    Eval(EvalArgs),
    /// Decode one continuation per context.
    Generate(GenerateArgs),
    /// Repetition and frequency-class analysis of decoded continuations.
    Analyze(EvalArgs),
    /// Gradient, candidate-oracle, metric, window and decoding checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// dialogue or nli.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    valid: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    copy_rate: Option<f64>,
    #[arg(long)]
    repeat_rate: Option<f64>,
    #[arg(long)]
    zipf: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory with train.jsonl and valid.jsonl; repeat to train on the union.
    #[arg(long)]
    data: Vec<PathBuf>,
    #[arg(long)]
    objective: Option<Mode>,
    /// Default weight of every unlikelihood term.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    alpha_context: Option<f64>,
    #[arg(long)]
    alpha_label: Option<f64>,
    #[arg(long)]
    alpha_vocab: Option<f64>,
    #[arg(long)]
    alpha_nli: Option<f64>,
    #[arg(long)]
    ngram: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Batches in the running unigram window.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    gen_max_len: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    valid_limit: Option<usize>,
    #[arg(long)]
    valid_gen: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Start from this checkpoint (its vocabulary and dimensions win).
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Final checkpoint; `<stem>.best.bin` and `<stem>.log.csv` go beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct DecodeArgs {
    #[arg(long)]
    decode: Option<Strategy>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    block_n: Option<usize>,
    /// Nucleus mass.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSONL corpus file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Corpus defining the human unigram and frequency classes (defaults to --data).
    #[arg(long)]
    human_data: Option<PathBuf>,
    #[arg(long)]
    ngram: Option<usize>,
    #[arg(long)]
    max_examples: Option<usize>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    max_examples: Option<usize>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grad_configs: Option<usize>,
    #[arg(long)]
    oracle_pairs: Option<usize>,
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<config::Usage>().is_some() {
        return 1;
    }
    match e.downcast_ref::<ulkit_core::Error>() {
        Some(ulkit_core::Error::Config(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
