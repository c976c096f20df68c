//! `narkit` binary: generate, preprocess, train, repair, bench, inspect.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Machine-readable
//! output goes to stdout or files; logs go to stderr.

mod commands;
mod settings;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "narkit", version, about = "Non-autoregressive program repair pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic buggy/fixed corpus as JSONL.
    Gen {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        count: usize,
        /// Output JSONL path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive repair scripts and dependency matrices for a JSONL corpus.
    Preprocess {
        /// Input corpus (one {id, buggy, fixed} object per line).
        #[arg(long)]
        input: PathBuf,
        /// Output directory (records.jsonl, vocab.txt, node_types.txt, meta.json).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        max_repair_length: Option<usize>,
        #[arg(long)]
        max_seq_len: Option<usize>,
        #[arg(long)]
        min_freq: Option<usize>,
    },
    /// Train the model on a preprocessed directory.
    Train {
        /// Preprocessed data directory.
        #[arg(long)]
        data: PathBuf,
        /// Output directory (model.ckpt, report.jsonl, config.txt).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        peak_lr: Option<f64>,
        #[arg(long)]
        d_model: Option<usize>,
        #[arg(long)]
        encoder_layers: Option<usize>,
        #[arg(long)]
        decoder_layers: Option<usize>,
        #[arg(long)]
        decoder_split: Option<usize>,
        #[arg(long)]
        max_seq_len: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        stop_at_val_exact: Option<f64>,
    },
    /// Generate ranked patches for a buggy source file.
    Repair {
        /// Checkpoint file; vocab.txt and node_types.txt must sit next to it.
        #[arg(long)]
        ckpt: PathBuf,
        /// File containing the buggy source text.
        #[arg(long)]
        input: PathBuf,
        /// Number of candidate patches.
        #[arg(long, default_value_t = 200)]
        k: usize,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two-pass parallel decoding latency against the per-token baseline.
    Bench {
        /// Comma-separated target lengths.
        #[arg(long, default_value = "16,32,64,128", value_delimiter = ',')]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Reuse a trained checkpoint; otherwise fresh seeded weights.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory (bench.csv, passes.csv, bench.md).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        d_model: Option<usize>,
    },
    /// Dump tokens, AST, and the dependency matrix for a code snippet.
    Inspect {
        /// Source text on the command line.
        #[arg(long, conflicts_with = "input")]
        text: Option<String>,
        /// Or a file to read.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successful exits; everything else
            // is a usage error.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Gen { seed, count, out } => commands::gen(seed, count, &out),
        Command::Preprocess { input, out, config, max_repair_length, max_seq_len, min_freq } => {
            commands::preprocess(&input, &out, config.as_deref(), max_repair_length, max_seq_len, min_freq)
        }
        Command::Train {
            data,
            out,
            config,
            seed,
            epochs,
            batch_size,
            peak_lr,
            d_model,
            encoder_layers,
            decoder_layers,
            decoder_split,
            max_seq_len,
            dropout,
            stop_at_val_exact,
        } => commands::train(commands::TrainArgs {
            data,
            out,
            config,
            seed,
            epochs,
            batch_size,
            peak_lr,
            d_model,
            encoder_layers,
            decoder_layers,
            decoder_split,
            max_seq_len,
            dropout,
            stop_at_val_exact,
        }),
        Command::Repair { ckpt, input, k, out } => commands::repair(&ckpt, &input, k, out.as_deref()),
        Command::Bench { lengths, repeats, ckpt, seed, out, config, d_model } => {
            commands::bench(&lengths, repeats, ckpt.as_deref(), seed, &out, config.as_deref(), d_model)
        }
        Command::Inspect { text, input } => commands::inspect(text, input.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
