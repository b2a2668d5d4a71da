//! `ratelab`: run the mixture-of-experts regression lab from the shell.
//!
//! Exit codes: 0 on success, 1 on validation/usage errors, 2 on
//! numerical failures (divergence, overflow, failed checks).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use ratelab_core::Error;

#[derive(Parser)]
#[command(
    name = "ratelab",
    version,
    about = "Quadratic-gated mixture-of-experts regression lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence-rate experiment and write rows.csv + report.json.
    Rates {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker count (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Stdout summary format.
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Check analytic gradients against finite differences on a sweep of
    /// random instances over all gate kinds and expert families.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Relative-error tolerance.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sampled linear-independence report for expert derivative features.
    Ident {
        /// Optional configuration (JSON); defaults to the linear-expert
        /// order-1 diagnostic.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-start search for non-trivial moment-system solutions.
    Polysys {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Component count.
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// System order.
        #[arg(long, default_value_t = 3)]
        r: u32,
        /// Restart budget.
        #[arg(long, default_value_t = 100)]
        budget: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Slow-sequence sweep: closed-form versus computed loss and the
    /// function-distance ratio.
    Pathology {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Gating parameter-count overhead for a transformer-style mixture.
    Overhead {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print attention versus active-attention outputs on a random
    /// instance.
    AttnDemo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a ground-truth measure and export a synthetic dataset.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Io(_) | Error::Json(_) => 1,
        Error::NumericalFailure(_) | Error::UnsupportedCellSize(_) | Error::Divergence { .. } => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Rates {
            config,
            out,
            seed,
            threads,
            format,
        } => commands::rates(&config, &out, seed, threads, format),
        Command::Gradcheck { seed, tol, out } => commands::gradcheck(seed, tol, out.as_deref()),
        Command::Ident { config, seed, out } => {
            commands::ident(config.as_deref(), seed, out.as_deref())
        }
        Command::Polysys {
            config,
            m,
            r,
            budget,
            seed,
            out,
        } => commands::polysys(config.as_deref(), m, r, budget, seed, out.as_deref()),
        Command::Pathology {
            config,
            seed,
            out,
            format,
        } => commands::pathology(config.as_deref(), seed, out.as_deref(), format),
        Command::Overhead { config, out } => commands::overhead(&config, out.as_deref()),
        Command::AttnDemo { config, seed, out } => {
            commands::attn_demo(config.as_deref(), seed, out.as_deref())
        }
        Command::Gen {
            config,
            out,
            seed,
            format,
        } => commands::gen(&config, &out, seed, format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
