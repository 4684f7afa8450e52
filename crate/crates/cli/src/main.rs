//! `dosedesign`: optimal designs for dose-response studies with several groups.

mod commands;
mod csvio;
mod exit;
mod study;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dosedesign", version, about = "Locally D-optimal and compound optimal designs for multi-group dose-response studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand that reads a study file.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Study file (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Random seed for optimizer restarts.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of optimizer restarts.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Grid density: optimizer candidate grid for `design`, scan grid for `certify`.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Exit with status 3 when the equivalence-theorem certificate fails.
    #[arg(long)]
    pub require_certificate: bool,
    /// Relative certificate tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the optimal design and write design.csv, design.txt and summary.json.
    Design(Common),
    /// Certify a design file; writes certificate.json and kappa.csv.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Design CSV (columns group, dose, group_weight, lambda).
        #[arg(long)]
        design: PathBuf,
    },
    /// Efficiency of each design against every candidate; writes efficiency.csv.
    Efficiency {
        #[command(flatten)]
        common: Common,
        /// Design CSV files, one row of the output each.
        #[arg(long = "design", required = true)]
        designs: Vec<PathBuf>,
    },
    /// Sweep scaled ED50 pairs `theta1 < theta2` for two Emax groups; writes region.csv.
    OptimalityRegion {
        /// Output directory, created if missing.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Variance ratio sigma2 of group 1 over sigma2 of group 2.
        #[arg(long)]
        r: f64,
        /// Grid points per axis.
        #[arg(long, default_value_t = 99)]
        n: usize,
    },
    /// Round a design to integer group sizes; writes exact.csv.
    Apportion {
        #[command(flatten)]
        common: Common,
        /// Design CSV; computed from the study when omitted.
        #[arg(long)]
        design: Option<PathBuf>,
        /// Total sample size; overrides `n_total` of the study.
        #[arg(long)]
        n: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design(common) => commands::design(&common),
        Command::Certify { common, design } => commands::certify(&common, &design),
        Command::Efficiency { common, designs } => commands::efficiency(&common, &designs),
        Command::OptimalityRegion { out, r, n } => commands::optimality_region(&out, r, n),
        Command::Apportion { common, design, n } => commands::apportion(&common, design.as_deref(), n),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
