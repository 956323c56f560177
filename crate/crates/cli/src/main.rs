//! `scesep`: command-line front end for training and running SCE speaker
//! separation models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sce_core::corpus::{MixType, Split};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug, Parser)]
#[command(name = "scesep", version, about = "Speaker separation with source-contrastive estimation")]
struct Cli {
    /// Run configuration (TOML). Flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CorpusArgs {
    /// Corpus root holding one directory of WAV files per speaker.
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Speaker metadata (`id|gender` lines). Defaults to `<corpus>/SPEAKERS.TXT`.
    #[arg(long, value_name = "PATH")]
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the default configuration, with implementation-chosen values marked.
    Config,
    /// Write a synthetic corpus.
    ToyCorpus {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// `band` (four noise-band speakers), `band-unseen` (two held-out
        /// bands) or `speech` (harmonic voices).
        #[arg(long, default_value = "band")]
        kind: String,
        /// Utterances per speaker.
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
    /// Draw a seeded mix manifest and optionally render the mixtures.
    Mix {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long = "type", value_name = "TYPE", default_value = "random")]
        mix_type: MixType,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Manifest destination; printed to stdout when absent.
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        /// Directory for mixture and reference WAVs.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train a model, writing checkpoints and a log to `--out`.
    Train {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Resume from this checkpoint.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Total step budget.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long = "type", value_name = "TYPE")]
        mix_type: Option<MixType>,
    },
    /// Separate a WAV file into `<stem>.source<k>.wav` files.
    Separate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Output directory; defaults to the input's directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        input: PathBuf,
    },
    /// Score a manifest and write a CSV report.
    Evaluate {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Model to evaluate; not needed with `--ideal-mask`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Use the ground-truth dominant-source masks instead of a model.
        #[arg(long)]
        ideal_mask: bool,
        /// Directory for `sdr_report.csv`.
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Time the loss against a pairwise affinity kernel as the bin count doubles.
    Bench {
        /// Repetitions per grid point.
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Smallest `T·F` for the loss.
        #[arg(long, default_value_t = 40 * 257)]
        bins: usize,
    },
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("SCESEP_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow::anyhow!("SCESEP_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    let base = commands::Base {
        config: cli.config,
        seed: cli.seed,
    };
    match cli.command {
        Command::Config => commands::config(&base),
        Command::ToyCorpus { out, kind, count } => commands::toy_corpus(&base, &out, &kind, count),
        Command::Mix {
            corpus,
            mix_type,
            count,
            split,
            manifest,
            out,
        } => commands::mix(&base, &corpus, mix_type, count, split, manifest.as_deref(), out.as_deref()),
        Command::Train {
            corpus,
            out,
            checkpoint,
            steps,
            mix_type,
        } => commands::train(&base, &corpus, &out, checkpoint.as_deref(), steps, mix_type),
        Command::Separate {
            checkpoint,
            k,
            out,
            input,
        } => commands::separate(&base, &checkpoint, k, out.as_deref(), &input),
        Command::Evaluate {
            corpus,
            manifest,
            checkpoint,
            k,
            ideal_mask,
            out,
        } => commands::evaluate(&base, &corpus, &manifest, checkpoint.as_deref(), k, ideal_mask, &out),
        Command::Bench { count, bins } => commands::bench(&base, count, bins),
    }
}

/// The error chain joined with `: `, skipping causes already quoted by
/// the message before them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
