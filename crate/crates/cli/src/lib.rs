//! `geolan` command-line tool.

pub mod cmd;
pub mod error;
pub mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult, EXIT_CORRUPT, EXIT_INPUT, EXIT_OK, EXIT_VERIFY};

#[derive(Debug, Parser)]
#[command(name = "geolan", version, about = "Train, analyze and verify geometrically regularized micro transformers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one seed from a JSON run config.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Geometry metrics for every layer of a dump.
    Analyze {
        dump: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long)]
        out: PathBuf,
        /// Attention dump (`layers·heads × N × N`).
        #[arg(long)]
        attn: Option<PathBuf>,
        /// Query dump (`layers·heads × tokens × d_head`).
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Heads per layer in the attention and query dumps.
        #[arg(long, default_value_t = 1)]
        heads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        run_id: Option<String>,
        /// Also write metric-vs-layer SVG plots.
        #[arg(long)]
        plot: bool,
    },
    /// Brute-force bound checks; exits 1 on any theorem-backed violation.
    Verify {
        #[arg(long, default_value = "default")]
        suite: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checkpoint for the Lipschitz check; a random model otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, hide = true, default_value_t = 1.0)]
        bound_scale: f64,
    },
    /// Mean difference, Cohen's d and Welch p between mode groups of run directories.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long = "metric", default_values_t = vec!["cone_top10".to_string(), "final_ce".to_string()])]
        metrics: Vec<String>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Restore clean activations grain by grain into a corrupted run.
    Patch {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        /// Corrupted tokens: a JSON array or raw bytes.
        #[arg(long)]
        corrupted: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        grain: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        /// Which sequence of the clean dump to use.
        #[arg(long, default_value_t = 0)]
        sequence: usize,
        /// States to patch in; defaults to the clean dump.
        #[arg(long)]
        donor: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { config, seed, out } => cmd::train::run(&config, seed, out.as_deref()).map(|_| ()),
        Command::Analyze {
            dump,
            delta,
            out,
            attn,
            queries,
            heads,
            seed,
            run_id,
            plot,
        } => cmd::analyze::run(&cmd::analyze::AnalyzeArgs {
            dump,
            delta,
            out,
            attn,
            queries,
            heads,
            seed,
            run_id,
            plot,
        })
        .map(|_| ()),
        Command::Verify {
            suite,
            trials,
            seed,
            out,
            checkpoint,
            bound_scale,
        } => cmd::verify::run(&suite, trials, seed, out.as_deref(), checkpoint.as_deref(), bound_scale),
        Command::Compare { runs, metrics, json } => cmd::compare::run(&runs, &metrics, json.as_deref()).map(|_| ()),
        Command::Patch {
            checkpoint,
            clean,
            corrupted,
            layer,
            grain,
            delta,
            sequence,
            donor,
            out,
        } => cmd::patch::run(&cmd::patch::PatchArgs {
            checkpoint,
            clean,
            corrupted,
            layer,
            grain,
            delta,
            sequence,
            donor,
            out,
        })
        .map(|_| ()),
    }
}
