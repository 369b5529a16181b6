//! `risk-ac`: run, verify, and sweep risk-sensitive actor-critic
//! experiments from JSON configs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//! 4 verification failure. The RISK_AC_LOG environment variable
//! (error | info | debug) controls stderr verbosity.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use risk_ac_cli::commands;
use risk_ac_cli::output::Format;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts (default: current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed(s).
    #[arg(long)]
    seed: Option<u64>,
    /// Table format for emitted time series.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
}

#[derive(Debug, Parser)]
#[command(name = "risk-ac", version, about = "Risk-sensitive actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Execute one training run and write its trace, test returns, and
    /// summary.
    Run(CommonArgs),
    /// Solve the configured tabular instance exactly and print every
    /// solution field as JSON; verifies all residuals.
    Oracle(CommonArgs),
    /// Check analytic gradients against finite differences and averaged
    /// perturbation estimates against the exact solver.
    Gradcheck(CommonArgs),
    /// Check the critic: fixed point, mean-dynamics spectrum, stochastic
    /// convergence, deterministic mean path.
    Tdcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Stochastic TD sample budget.
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
    },
    /// Run every (algorithm, seed) pair of a sweep config and aggregate
    /// test statistics per algorithm.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Render the artifacts in a directory as text tables.
    Report {
        /// Directory holding run or sweep artifacts.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
}

fn init_logging() -> Result<(), String> {
    let level = std::env::var("RISK_AC_LOG").unwrap_or_else(|_| String::from("error"));
    if !["error", "info", "debug"].contains(&level.as_str()) {
        return Err(format!(
            "RISK_AC_LOG must be one of error, info, debug; got '{level}'"
        ));
    }
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .init();
    Ok(())
}

fn main() -> ExitCode {
    if let Err(msg) = init_logging() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(c) => {
            commands::cmd_run(&c.config, c.out.as_deref(), c.seed, c.format.into())
        }
        Cmd::Oracle(c) => commands::cmd_oracle(&c.config, c.out.as_deref(), c.format.into()),
        Cmd::Gradcheck(c) => {
            commands::cmd_gradcheck(&c.config, c.out.as_deref(), c.seed, c.format.into())
        }
        Cmd::Tdcheck { common: c, samples } => commands::cmd_tdcheck(
            &c.config,
            c.out.as_deref(),
            c.seed,
            *samples,
            c.format.into(),
        ),
        Cmd::Sweep { common: c, workers } => commands::cmd_sweep(
            &c.config,
            c.out.as_deref(),
            c.seed,
            *workers,
            c.format.into(),
        ),
        Cmd::Report { out, format } => commands::cmd_report(out, (*format).into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
