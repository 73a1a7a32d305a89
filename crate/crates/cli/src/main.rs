//! `wsqkd`: plan, budget and simulate wavelength-routed QKD networks.
//!
//! Every command prints a table on stdout. `--out PATH` also writes the JSON
//! document to PATH; `--json` puts the JSON on stdout and the table on stderr.
//! Exit codes: 0 success, 1 usage or configuration error, 2 reproduction
//! failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "wsqkd", version, about = "Wavelength-saving QKD network planner")]
struct Cli {
    /// Write the JSON document to stdout and the table to stderr.
    #[arg(long, global = true)]
    json: bool,

    /// Also write the JSON document to this file.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlanFormat {
    Table,
    Text,
    Dot,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Full-mesh wavelength plan for N wavelengths (2N+1 nodes).
    Plan {
        n_wavelengths: usize,
        #[arg(long, value_enum, default_value = "table")]
        format: PlanFormat,
        /// Comma-separated node labels in plan order.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
    },
    /// Loss budget of one link.
    Budget {
        /// Scenario file, `-` for stdin, or `wuhu`.
        scenario: String,
        /// Link as `A2R2B` or `A->B`.
        link: String,
    },
    /// Crosstalk paths, ratios and QBER penalty of one link.
    Xtalk {
        scenario: String,
        link: String,
        #[arg(long, conflicts_with = "best")]
        worst: bool,
        #[arg(long)]
        best: bool,
        /// Count interband leakage too.
        #[arg(long)]
        interband: bool,
    },
    /// Decoy-state key rate of one link.
    Keyrate {
        scenario: String,
        link: String,
        /// Use this attenuation instead of the scenario budget.
        #[arg(long, value_name = "DB")]
        attenuation_db: Option<f64>,
    },
    /// Pulse-level Monte Carlo of one link.
    Simulate {
        scenario: String,
        link: String,
        #[arg(long, default_value_t = 1_000_000)]
        pulses: u64,
        #[arg(long, env = "WSQKD_SEED", default_value_t = 1)]
        seed: u64,
        /// Inject incoherent crosstalk at this ratio.
        #[arg(long)]
        chi: Option<f64>,
        /// Write one line per registered click to this file.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        /// Run on the calling thread only.
        #[arg(long)]
        sequential: bool,
    },
    /// Compare the model with every measured link of a scenario.
    Reproduce {
        scenario: String,
        #[arg(long, default_value = "factor2", value_parser = ["factor2", "pct25"])]
        tolerance: String,
        /// Monte Carlo pulses per link; 0 skips the check.
        #[arg(long, default_value_t = 1_000_000)]
        mc_pulses: u64,
        #[arg(long, env = "WSQKD_SEED", default_value_t = 1)]
        seed: u64,
    },
}

pub enum Outcome {
    Ok,
    ReproductionFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ReproductionFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
