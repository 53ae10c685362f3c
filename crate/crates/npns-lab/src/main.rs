use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use npns_lab::cli::checks;
use npns_lab::cli::config::{self, Kind};
use npns_lab::cli::runner::{self, RunStatus};

#[derive(Parser)]
#[command(
    name = "npns-lab",
    version,
    about = "Numerical laboratory for ionic electrodiffusion: equilibrium solves, \
             permittivity sweeps, transport runs, and decay studies"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (the NPNS_LAB_OUT environment variable overrides this).
    #[arg(long, default_value = "npns-out")]
    out: PathBuf,
    /// Worker threads for sweep entries.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one wall-determined equilibrium and tabulate its summary row.
    PbSolve(RunArgs),
    /// Integrate the transport system and tabulate diagnostics over time.
    Simulate(RunArgs),
    /// Solve the equilibrium across a decreasing list of permittivities.
    Sweep(RunArgs),
    /// Simulate, then fit the exponential decay rate of the charge norm.
    DecayStudy(RunArgs),
    /// Run the seeded cross-module invariant battery.
    Check {
        /// Seed for the randomized checks.
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Plot columns of a CSV table produced by the other subcommands.
    Plot {
        /// CSV file to read.
        csv: PathBuf,
        /// Column for the horizontal axis (default: the table's first column).
        #[arg(long)]
        x: Option<String>,
        /// Column for the vertical axis (repeat for several series).
        #[arg(long, required = true)]
        y: Vec<String>,
        /// Logarithmic horizontal axis.
        #[arg(long)]
        logx: bool,
        /// Logarithmic vertical axis.
        #[arg(long)]
        logy: bool,
        /// Output directory (the NPNS_LAB_OUT environment variable overrides this).
        #[arg(long, default_value = "npns-out")]
        out: PathBuf,
    },
}

/// The environment override wins over the flag so batch drivers can redirect
/// outputs without editing command lines.
fn out_dir(flag: PathBuf) -> PathBuf {
    std::env::var_os("NPNS_LAB_OUT").map(PathBuf::from).unwrap_or(flag)
}

fn run_kind(args: &RunArgs, want: Kind) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let cfg = config::parse_config(&text)?;
    if cfg.experiment.kind != want {
        bail!(
            "the config declares kind {}, but the subcommand asked for {}",
            cfg.experiment.kind.name(),
            want.name()
        );
    }
    let outcome = runner::run(&cfg, &out_dir(args.out.clone()), args.workers)?;
    for f in &outcome.files {
        println!("wrote {}", outcome.out_dir.join(f).display());
    }
    match outcome.status {
        RunStatus::Ok => Ok(ExitCode::SUCCESS),
        RunStatus::Failed(reason) => {
            eprintln!("run failed: {reason}");
            Ok(ExitCode::FAILURE)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::PbSolve(a) => run_kind(&a, Kind::PbSolve),
        Cmd::Simulate(a) => run_kind(&a, Kind::Simulate),
        Cmd::Sweep(a) => run_kind(&a, Kind::Sweep),
        Cmd::DecayStudy(a) => run_kind(&a, Kind::DecayStudy),
        Cmd::Check { seed } => {
            let outcomes = checks::run_all(seed);
            let total = outcomes.len();
            let mut failures = 0usize;
            for (i, o) in outcomes.iter().enumerate() {
                println!("{}", checks::format_line(i + 1, total, o));
                failures += usize::from(!o.passed());
            }
            if failures == 0 {
                println!("all {total} checks passed (seed {seed})");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{failures} of {total} checks failed (seed {seed})");
                Ok(ExitCode::FAILURE)
            }
        }
        Cmd::Plot { csv, x, y, logx, logy, out } => {
            let path = runner::plot_csv(&csv, x.as_deref(), &y, logx, logy, &out_dir(out))?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
