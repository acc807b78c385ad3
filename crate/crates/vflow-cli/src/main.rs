//! `vflow`: train, evaluate, and inspect augmented normalizing flows.
//!
//! Exit codes: 0 on success, 1 for usage or configuration problems, 2 for
//! numeric failures (and for theory checks that exceed tolerance).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "vflow", version, about = "Density estimation with augmented normalizing flows")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model described by a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Random seed (beats the config's; omitted, one is drawn and printed).
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for metrics.csv and model.ckpt.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Continue a saved run instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Estimate held-out log-likelihood by importance sampling.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config supplying the data section to draw test points from.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score these rows instead of generated data.
        #[arg(long)]
        data_csv: Option<PathBuf>,
        /// Importance samples per point.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Test points to generate when --data-csv is absent.
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Score the discrete (dequantization) likelihood.
        #[arg(long)]
        discrete: bool,
        /// Also write per-point log-likelihoods as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate log-density over a square grid (2-d models).
    Grid {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cells per axis.
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        /// Axis range as LO,HI.
        #[arg(long, default_value = "-4,4", value_parser = commands::parse_bounds, allow_hyphen_values = true)]
        bounds: (f64, f64),
        /// Importance samples per cell (augmented models).
        #[arg(long, default_value_t = 16)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw data-space samples from the model.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate samples from a config's data distribution.
    DataDump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Quantize using the data section's levels.
        #[arg(long)]
        quantized: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify that augmenting a flow preserves its likelihood exactly.
    CheckTheory {
        /// Use this run's density flow as the base (must have d_z = 0);
        /// omitted, three fresh random bases are checked.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Augmentation widths to test, e.g. 1,2,8.
        #[arg(long, default_value = "1,2,8")]
        dz: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Test points per configuration.
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not failures.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let outcome = match cli.cmd {
        Cmd::Train {
            config,
            seed,
            out,
            resume,
        } => commands::train(&config, seed, &out, resume),
        Cmd::Eval {
            checkpoint,
            config,
            data_csv,
            samples,
            points,
            seed,
            discrete,
            out,
        } => commands::eval(
            &checkpoint,
            config,
            data_csv,
            samples,
            points,
            seed,
            discrete,
            out,
        ),
        Cmd::Grid {
            checkpoint,
            resolution,
            bounds,
            samples,
            seed,
            out,
        } => commands::grid(&checkpoint, resolution, bounds, samples, seed, &out),
        Cmd::Sample {
            checkpoint,
            samples,
            seed,
            out,
        } => commands::sample(&checkpoint, samples, seed, &out),
        Cmd::DataDump {
            config,
            samples,
            seed,
            quantized,
            out,
        } => commands::data_dump(&config, samples, seed, quantized, &out),
        Cmd::CheckTheory {
            checkpoint,
            dz,
            seed,
            points,
            tolerance,
        } => match commands::parse_dims(&dz) {
            Ok(dims) => commands::check_theory(checkpoint, &dims, seed, points, tolerance),
            Err(msg) => {
                eprintln!("error: --dz {msg}");
                return ExitCode::from(1);
            }
        },
    };

    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => ExitCode::from(commands::report_error(&e)),
    }
}
