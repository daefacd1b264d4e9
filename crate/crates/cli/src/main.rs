//! `layerlab`: config-driven experiments on layered solutions of the vector
//! Allen-Cahn equation. Set LAYERLAB_LOG (e.g. `info`, `debug`) for progress output.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::CliError;
use output::Context;

#[derive(Parser)]
#[command(name = "layerlab", version, about = "Multi-layer solutions and slow layer dynamics for the vector Allen-Cahn equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "layerlab-out")]
    out: PathBuf,
    /// Parallel jobs for eps sweeps; 0 picks the number of cores.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Write a gnuplot script next to every CSV.
    #[arg(long, global = true)]
    emit_gnuplot: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the chain's connections and report their asymptotics.
    Heteroclinic,
    /// Evaluate the layered ansatz, its residual and the reduced coefficients.
    Ansatz,
    /// Small eigenvalues of the linearisation at the ansatz.
    Spectrum,
    /// Stationary layered solution from the bifurcation equation.
    Stationary,
    /// PDE run from the ansatz with layer tracking.
    PdeRun,
    /// Layer ODE from the same initial positions.
    OdeRun,
    /// Join a tracked PDE run with the layer ODE started at the same positions.
    Compare,
}

fn load(path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    let path = path.ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = load(cli.config.as_ref())?;
    let ctx = Context::new(config, cli.out.clone(), cli.emit_gnuplot);
    std::fs::create_dir_all(&ctx.out)?;
    ctx.write_resolved_config()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    log::info!("config_hash={} out={}", ctx.hash, ctx.out.display());
    pool.install(|| match cli.command {
        Command::Heteroclinic => commands::heteroclinic(&ctx),
        Command::Ansatz => commands::ansatz(&ctx),
        Command::Spectrum => commands::spectrum(&ctx),
        Command::Stationary => commands::stationary(&ctx),
        Command::PdeRun => commands::pde_run(&ctx),
        Command::OdeRun => commands::ode_run(&ctx),
        Command::Compare => commands::compare(&ctx),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LAYERLAB_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help, --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
