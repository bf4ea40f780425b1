//! `sqzgan` command-line tool.
//!
//! Exit codes: 0 success, 1 verification or numeric failure, 2 usage or
//! configuration error.

mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "sqzgan", version, about = "Skip/squeeze StyleGAN2 synthesis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check that the skip-connection output equals one projection of the
    /// concatenated, upsampled toRGB features.
    Verify {
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Defaults to 1e-12 at f64 and 1e-4 at f32.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value = "f64")]
        precision: String,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the key=value report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Enumerate generator parameters and compare with closed forms.
    Params {
        config: PathBuf,
        /// Config of the reference generator for the reduction figure;
        /// defaults to the same config with the skip variant.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Print key=value lines instead of text.
        #[arg(long)]
        kv: bool,
    },
    /// Train on the toy dataset; writes a checkpoint, the loss history and a
    /// 4x4 sample grid.
    Train {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config step count.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print a progress line every this many steps (0 for none).
        #[arg(long, default_value_t = 50)]
        log_every: usize,
    },
    /// Write images from the averaged generator of a checkpoint.
    Generate {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Refuse the checkpoint unless it matches this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference gradient checks at f64.
    Gradcheck {
        /// core, losses or r1.
        #[arg(long, default_value = "core")]
        suite: String,
    },
    /// Fréchet distance and Inception Score on CSV inputs.
    Metrics {
        #[command(subcommand)]
        which: MetricsCommand,
    },
}

#[derive(Subcommand, Debug)]
enum MetricsCommand {
    /// Mean and covariance of a feature table (one sample per row).
    Fit { features: PathBuf },
    /// Fréchet distance between the Gaussian fits of two feature tables.
    Fid { a: PathBuf, b: PathBuf },
    /// Inception Score of a class-probability table (one sample per row).
    Is { probs: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify {
            config,
            trials,
            tol,
            precision,
            seed,
            report,
        } => commands::verify(&config, trials, tol, &precision, seed, report.as_deref()),
        Command::Params { config, baseline, kv } => commands::params(&config, baseline.as_deref(), kv),
        Command::Train {
            config,
            out,
            steps,
            seed,
            log_every,
        } => commands::train(&config, &out, steps, seed, log_every),
        Command::Generate {
            checkpoint,
            count,
            seed,
            out,
            config,
        } => commands::generate(&checkpoint, count, seed, &out, config.as_deref()),
        Command::Gradcheck { suite } => commands::gradcheck(&suite),
        Command::Metrics { which } => match which {
            MetricsCommand::Fit { features } => commands::metrics_fit(&features),
            MetricsCommand::Fid { a, b } => commands::metrics_fid(&a, &b),
            MetricsCommand::Is { probs } => commands::metrics_is(&probs),
        },
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
