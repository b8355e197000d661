//! Command-line front end: dataset generation, reference fitting, training, suites,
//! evaluation and plots.

mod commands;
mod config;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::output::Failure;

#[derive(Parser, Debug)]
#[command(name = "sprinql", version, about = "Preference-ranked inverse soft-Q learning on tabular MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(clap::Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (also the default input directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for `suite`; 0 uses every core.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output format for `suite`, `eval` and `plot`.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Generate a ranked demonstration dataset.
    GenData,
    /// Fit the reference reward and level weights to a dataset.
    FitReference,
    /// Train one method on a dataset.
    Train,
    /// Run the method comparison over environments and seeds.
    Suite,
    /// Score a saved policy and, optionally, a recovered reward.
    Eval,
    /// Draw SVG plots from suite results and training diagnostics.
    Plot,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => code,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
