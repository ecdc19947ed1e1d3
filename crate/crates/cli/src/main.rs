//! Bias-transfer pipeline CLI.
//!
//! Subcommands: `synth`, `train`, `transform`, `evaluate`, `baseline`,
//! `report`. Each writes a replayable manifest next to its outputs. Exit
//! codes identify the error class (see `exit_code`).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use biastransfer::error::Error;
use biastransfer::metrics::Split;
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "biastransfer", version, about = "Unpaired bias transfer for microscopy-style images")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, default_value = "experiment.toml")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-domain benchmark and its downstream
    /// classifier.
    Synth {
        /// Output root (defaults to [data].root from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the multi-seed training protocol for the configured variant.
    Train,
    /// Transform a folder of images through a trained checkpoint.
    Transform {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target domain name (conditional models only).
        #[arg(long)]
        target_domain: Option<String>,
    },
    /// Score transformed images: SSIM per pair, feature distances, optional
    /// downstream classification.
    Evaluate {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        transformed: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, value_parser = parse_split, default_value = "val")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        /// Frozen downstream classifier (from `synth`).
        #[arg(long)]
        downstream: Option<PathBuf>,
        /// labels.csv matching the transformed images.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Color-transfer baseline against one seeded random target image.
    Baseline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate finished runs into boxplots and a markdown summary.
    Report {
        /// Override the output root to aggregate.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(format!("split must be `val` or `test`, got `{other}`")),
    }
}

/// Distinct exit codes per error class.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Io(_) => 3,
        Error::Dimension(_) | Error::Channel(_) => 4,
        Error::SpecMismatch(_) => 5,
        Error::Numeric(_) => 6,
        Error::Alignment(_) => 7,
        Error::Empty(_) => 8,
        Error::Contract(_) => 9,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match ExperimentConfig::load(&cli.config) {
        Ok(config) => config,
        Err(err) => {
            // A missing default config file is fine for commands that do not
            // strictly need one; fall back to defaults in that case.
            if cli.config.exists() {
                eprintln!("error: {err}");
                return ExitCode::from(exit_code(&err));
            }
            ExperimentConfig::default()
        }
    };

    let result = match cli.command {
        Command::Synth { out } => commands::synth::run(&config, out),
        Command::Train => commands::train::run(&config),
        Command::Transform { checkpoint, input, out, target_domain } => {
            commands::transform::run(&config, &checkpoint, &input, out, target_domain)
        }
        Command::Evaluate { original, transformed, target, split, out, downstream, labels } => {
            commands::evaluate::run(
                &config,
                &commands::evaluate::EvaluateArgs {
                    original,
                    transformed,
                    target,
                    split,
                    out,
                    downstream,
                    labels,
                },
            )
        }
        Command::Baseline { input, target, seed, out } => {
            commands::baseline::run(&config, &input, &target, seed, out)
        }
        Command::Report { out } => commands::report::run(&config, out),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
