//! `paydpi` command-line driver: ingest → build-dataset → train → evaluate,
//! plus the encryption ablation, report rendering and a synthetic corpus
//! generator for desk-scale runs.
//!
//! Every subcommand writes its artifacts under `--out` (default from
//! `PAYDPI_OUT`) along with a `manifest.<command>.json`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use paydpi::eval::Mode;
use thiserror::Error;

mod commands;
pub mod config;
pub mod manifest;
pub mod synthetic;

pub use synthetic::{make_synthetic, SyntheticSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Parser)]
#[command(name = "paydpi", version, about = "Payload-level traffic classification pipeline")]
pub struct Cli {
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, env = "PAYDPI_OUT", default_value = "paydpi-out")]
    pub out: PathBuf,
    /// TOML run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract TCP/UDP payloads from classic pcap captures.
    Ingest {
        #[arg(long, required = true, num_args = 1..)]
        pcap: Vec<PathBuf>,
    },
    /// Dedup, label against ground truth, balance.
    BuildDataset {
        #[arg(long)]
        packets: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        /// Class map and column preset: unsw or ciciot.
        #[arg(long)]
        preset: Option<String>,
        /// Explicit multiclass categories, in label order.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
        /// Seconds added to every ground-truth window.
        #[arg(long, allow_negative_numbers = true)]
        time_offset: Option<i64>,
    },
    /// Write a balanced synthetic motif corpus.
    Synthetic {
        #[arg(long)]
        samples: Option<usize>,
        /// Motif as hex.
        #[arg(long)]
        motif: Option<String>,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Split a dataset 70/20/10 and train a classifier.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Score a checkpoint on a labeled split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Row label in the rendered table.
        #[arg(long, default_value = "paydpi")]
        method: String,
    },
    /// Train and evaluate once per encryption condition.
    CryptoAblation {
        #[arg(long)]
        dataset: PathBuf,
        /// Any of plaintext, aes256-cbc, fernet-banded, fernet-fixed, or a
        /// custom condition name from the config.
        #[arg(long, value_delimiter = ',')]
        conditions: Option<Vec<String>>,
        /// Zero-pad plaintexts to a common length before encrypting.
        #[arg(long)]
        equalize_lengths: bool,
        /// Seconds between class timestamp bands for fernet-banded.
        #[arg(long)]
        band: Option<u64>,
        /// Timestamp used by fernet-fixed.
        #[arg(long)]
        fixed_timestamp: Option<u64>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Render evaluation or ablation JSON reports as one table.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Row names for metric reports, in input order.
        #[arg(long, value_delimiter = ',')]
        names: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    #[arg(long)]
    pub mode: Option<Mode>,
    /// paper or desk.
    #[arg(long)]
    pub model_preset: Option<String>,
    /// paper or desk.
    #[arg(long)]
    pub train_preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub num_hidden_layers: Option<usize>,
    #[arg(long)]
    pub num_attention_heads: Option<usize>,
    #[arg(long)]
    pub intermediate_size: Option<usize>,
    #[arg(long)]
    pub max_position_embeddings: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 2 for usage errors, 1 otherwise.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(cli, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<CliError>().is_some_and(|c| matches!(c, CliError::Usage(_))) {
                2
            } else {
                1
            }
        }
    }
}
