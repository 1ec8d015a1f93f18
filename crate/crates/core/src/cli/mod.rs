//! The `ou-gauss` command line.
//!
//! Exit codes: 0 success, 1 computational or I/O failure, 2 usage error.
//! Every flag can also come from an `OU_GAUSS_<FLAG>` environment variable
//! (upper case, `-` as `_`, e.g. `OU_GAUSS_T_LIST`) or from a `--config` file.

mod commands;
mod config;
mod output;

pub use config::{load_config, parse_config};
pub use output::{fmt_f64, read_paths_csv};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(
    name = "ou-gauss",
    version,
    about = "Drift estimation lab for Ornstein-Uhlenbeck processes driven by Gaussian noise",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Kernel, e.g. `fbm:H=0.6`, `bifbm:H=0.9,K=0.7`, `mix:[0.5*fbm:H=0.6;1*subfbm:H=0.6]`
    #[arg(long, global = true, env = "OU_GAUSS_KERNEL")]
    pub kernel: Option<String>,
    /// Drift parameter (default 1)
    #[arg(long, global = true, env = "OU_GAUSS_THETA")]
    pub theta: Option<f64>,
    /// Horizon
    #[arg(long = "T", global = true, env = "OU_GAUSS_T", conflicts_with = "t_list")]
    pub t: Option<f64>,
    /// Comma-separated horizons
    #[arg(long = "T-list", global = true, env = "OU_GAUSS_T_LIST", value_delimiter = ',')]
    pub t_list: Option<Vec<f64>>,
    /// Cells per horizon (overrides --dt)
    #[arg(long, global = true, env = "OU_GAUSS_N")]
    pub n: Option<usize>,
    /// Grid step (default 0.02/theta)
    #[arg(long, global = true, env = "OU_GAUSS_DT")]
    pub dt: Option<f64>,
    #[arg(long, global = true, env = "OU_GAUSS_REPS")]
    pub reps: Option<usize>,
    #[arg(long, global = true, env = "OU_GAUSS_SEED")]
    pub seed: Option<u64>,
    /// Output file (standard output when absent)
    #[arg(long, global = true, env = "OU_GAUSS_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "OU_GAUSS_FORMAT", value_enum)]
    pub format: Option<Format>,
    /// Worker threads (default: all cores); never changes results
    #[arg(long, global = true, env = "OU_GAUSS_THREADS")]
    pub threads: Option<usize>,
    /// Flop budget for Monte Carlo runs
    #[arg(long, global = true, env = "OU_GAUSS_BUDGET")]
    pub budget: Option<f64>,
    /// `key = value` file consulted after flags and environment
    #[arg(long, global = true, env = "OU_GAUSS_CONFIG")]
    pub config: Option<PathBuf>,
    /// Write 0 for wall-clock fields so reruns are byte-identical
    #[arg(long, global = true)]
    pub reproducible: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Limit constants: beta, C_beta, C'_beta, a, sigma_beta^2, gamma
    Constants,
    /// Sweep |Psi(t,s)| (ts)^(1-beta) against C'_beta on a probe grid
    CheckHypothesis {
        /// Probe coordinates per axis (default 50)
        #[arg(long)]
        probes: Option<usize>,
        /// Smallest probe coordinate (default 0.01)
        #[arg(long)]
        lo: Option<f64>,
        /// Largest probe coordinate (default 10)
        #[arg(long)]
        hi: Option<f64>,
    },
    /// Simulate noise increments and OU paths
    Simulate {
        /// One long-format file with a `rep` column instead of one file per replication
        #[arg(long)]
        long: bool,
    },
    /// Estimate theta from paths (read from --input or simulated inline)
    Estimate {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Skip the fixed-point plugin estimator
        #[arg(long)]
        no_plugin: bool,
    },
    /// Table of b_T, ||f_T||, ||h_T||, the contraction and alpha_T
    HilbertNorms {
        /// Also compute ||f_T (x)_1 f_T|| (one dense n x n product per row)
        #[arg(long)]
        contraction: bool,
    },
    /// KS distances of the studentized statistics per horizon
    McClt {
        /// Also write per-replication records as CSV
        #[arg(long)]
        records: Option<PathBuf>,
        /// Include the plugin estimator (costly)
        #[arg(long)]
        plugin: bool,
    },
    /// Log-log KS slope over a geometric T list
    McRate {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        plugin: bool,
    },
    /// Estimators along nested horizons of single trajectories
    McConsistency {
        /// Increasing horizons (default: the T list)
        #[arg(long, value_delimiter = ',', env = "OU_GAUSS_CHECKPOINTS")]
        checkpoints: Option<Vec<f64>>,
        /// Number of trajectories (default 20)
        #[arg(long, env = "OU_GAUSS_PATHS")]
        paths: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Constants => "constants",
            Command::CheckHypothesis { .. } => "check-hypothesis",
            Command::Simulate { .. } => "simulate",
            Command::Estimate { .. } => "estimate",
            Command::HilbertNorms { .. } => "hilbert-norms",
            Command::McClt { .. } => "mc-clt",
            Command::McRate { .. } => "mc-rate",
            Command::McConsistency { .. } => "mc-consistency",
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::UnsupportedRegime { .. } => 2,
        _ => 1,
    }
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
