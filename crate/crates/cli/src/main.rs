// NaN must fail validation, hence `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Axis, Config};
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "pxfb", version, about = "Bernoulli free boundary problem for the p(x)-Laplacian")]
struct Cli {
    /// Progress lines (stage, iterations, energy, gradient) on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML problem description.
    #[arg(long)]
    config: PathBuf,

    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimize and write u, the free boundary, the energy trace and a result summary.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Solve (or load a field) and run the verification suite.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Verify this node-field CSV instead of solving.
        #[arg(long)]
        load_field: Option<PathBuf>,
    },
    /// Run one solve and verification per parameter value.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Write the canonical config, input fields, lambda* and the solution as CSV.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        load_field: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Solve { common }
            | Command::Verify { common, .. }
            | Command::Sweep { common, .. }
            | Command::Export { common, .. } => common,
        }
    }
}

fn output_dir(common: &Common, cfg: &Config) -> PathBuf {
    common.output.clone().unwrap_or_else(|| cfg.base_dir.join(&cfg.output_dir))
}

fn run(cli: Cli) -> CliResult<i32> {
    let common = cli.command.common();
    let cfg = Config::load(&common.config)?;
    let out = output_dir(common, &cfg);
    match &cli.command {
        Command::Solve { .. } => commands::solve(&cfg, &out),
        Command::Verify { load_field, .. } => commands::verify(&cfg, &out, load_field.as_deref()),
        Command::Sweep { axis, values, jobs, .. } => commands::sweep(&cfg, &out, *axis, values, *jobs),
        Command::Export { load_field, .. } => commands::export(&cfg, &out, load_field.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
