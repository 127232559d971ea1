//! `sphere-dmc`: eigenvalue tables, observation PDFs, BER sweeps and
//! particle simulations for diffusion inside a sphere, written as CSV.
//!
//! Exit codes: 0 success, 1 I/O error, 2 configuration error,
//! 3 numerical non-convergence, 4 simulator time step too large.

mod commands;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sphere_dmc::Execution;

use commands::{BerMethod, CliError};
use scenario::{RawConfig, Scenario};

#[derive(Parser)]
#[command(name = "sphere-dmc", version, about = "Diffusive molecular communication inside a sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named preset: fig1, fig2, fig4, fig5.
    #[arg(long)]
    preset: Option<String>,
    /// Override one key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed for the simulator and Monte Carlo runs.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Analytic,
    Mc,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalue table `n,k,lambda_per_m,norm_m3`.
    Eigen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
    },
    /// Observation-time PDF over a log-spaced grid.
    Pdf {
        #[command(flatten)]
        common: Common,
        /// Add the receiver-volume integrated column.
        #[arg(long)]
        exact: bool,
    },
    /// BER versus slot duration.
    Ber {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = MethodArg::Both)]
        method: MethodArg,
    },
    /// Particle-based simulation of the observation probability.
    Pbs {
        #[command(flatten)]
        common: Common,
    },
    /// Simulation joined with the analytic curve, with agreement statistics.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Print the resolved scenario in canonical SI form.
    Scenario {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<Scenario, CliError> {
    let cfg = |e: scenario::ConfigError| CliError::Config(e.0);
    let mut raw = match &common.preset {
        Some(p) => RawConfig::preset(p).map_err(cfg)?,
        None => RawConfig::defaults(),
    };
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        raw.apply_text(&text).map_err(cfg)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        raw.set(k.trim(), v.trim()).map_err(cfg)?;
    }
    if let Some(seed) = common.seed {
        raw.set("seed", &seed.to_string()).map_err(cfg)?;
    }
    Scenario::from_raw(&raw).map_err(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Eigen { common, .. }
        | Command::Pdf { common, .. }
        | Command::Ber { common, .. }
        | Command::Pbs { common }
        | Command::Compare { common }
        | Command::Scenario { common } => common.clone(),
    };
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let mut scenario = load(&common)?;
    let exec = Execution::Parallel;
    let text = match cli.command {
        Command::Eigen { n_max, k_max, .. } => {
            scenario.trunc.n_max = n_max.unwrap_or(scenario.trunc.n_max);
            scenario.trunc.k_max = k_max.unwrap_or(scenario.trunc.k_max);
            commands::cmd_eigen(&scenario, exec)?
        }
        Command::Pdf { exact, .. } => commands::cmd_pdf(&scenario, exact, exec)?,
        Command::Ber { method, .. } => {
            let method = match method {
                MethodArg::Analytic => BerMethod::Analytic,
                MethodArg::Mc => BerMethod::MonteCarlo,
                MethodArg::Both => BerMethod::Both,
            };
            commands::cmd_ber(&scenario, method, exec)?
        }
        Command::Pbs { .. } => commands::cmd_pbs(&scenario, exec)?,
        Command::Compare { .. } => commands::cmd_compare(&scenario, exec)?,
        Command::Scenario { .. } => scenario.emit(),
    };
    match &common.out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
