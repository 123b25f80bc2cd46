//! `sharpcomp` command-line driver.

mod commands;
mod exit;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Sharpness and representation-compression metrics for small networks.
#[derive(Parser, Debug)]
#[command(name = "sharpcomp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file (flag > config > default).
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SelectorArg {
    Train,
    Test,
    Misclassified,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one network and record metrics at every checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `$SHARPCOMP_OUT/train-<hash>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the learning-rate × batch × seed grid from the config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute metrics of a checkpoint on chosen sample selectors.
    Metrics {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, num_args = 1.., default_values_t = [SelectorArg::Train, SelectorArg::Test, SelectorArg::Misclassified])]
        selector: Vec<SelectorArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every inequality at a checkpoint; exits 5 if any is violated.
    VerifyBounds {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Number of training samples to probe (overrides the config budget).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Correlation table over the final records of a sweep directory.
    Correlate {
        #[arg(long)]
        sweep_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out, overrides } => commands::train(&config, out, &overrides),
        Command::Sweep { config, out, overrides } => commands::sweep(&config, out, &overrides),
        Command::Metrics {
            checkpoint,
            config,
            selector,
            out,
        } => commands::metrics(&checkpoint, &config, &selector, out),
        Command::VerifyBounds {
            checkpoint,
            config,
            samples,
        } => commands::verify_bounds(&checkpoint, &config, samples),
        Command::Correlate { sweep_dir } => commands::correlate(&sweep_dir),
    };
    match result {
        Ok(()) => ExitCode::from(exit::OK),
        Err(f) => {
            eprintln!("error: {f}");
            f.exit()
        }
    }
}
