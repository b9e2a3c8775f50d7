mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "smallmass",
    version,
    about = "Small-mass limit simulations, convergence sweeps and assumption checks"
)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "SMALLMASS_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Run {
    /// Run configuration (TOML, or JSON).
    config: PathBuf,
    /// Overrides `[output] directory`.
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate trajectories of the full and/or limiting system.
    Simulate(Run),
    /// Tabulate the homogenized coefficients on a grid of positions.
    LimitCoeffs(Run),
    /// Strong-error sweep over ε with a fitted rate.
    Converge(Run),
    /// Momentum-decay sweep over ε.
    Momentum(Run),
    /// Kinetic-energy moments over ε.
    Energy(Run),
    /// Sampled assumption checks.
    Validate(Run),
}

fn load(run: &Run) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&run.config)?;
    if let Some(dir) = &run.output_dir {
        cfg.output.directory = dir.clone();
    }
    Ok(cfg)
}

fn slope(s: Option<f64>) -> String {
    s.map_or("n/a".into(), |s| format!("{s:.4}"))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate(run) => {
            let written = commands::simulate(load(&run)?)?;
            println!("wrote {} files to {}", written.len(), dir_of(&written));
        }
        Command::LimitCoeffs(run) => {
            let written = commands::limit_coeffs(load(&run)?)?;
            println!("wrote {}", commands::display(&written));
        }
        Command::Converge(run) => {
            let (written, s) = commands::converge(load(&run)?)?;
            println!("slope {}; wrote {}", slope(s), commands::display(&written));
        }
        Command::Momentum(run) => {
            let (written, s) = commands::momentum(load(&run)?)?;
            println!("slope {}; wrote {}", slope(s), commands::display(&written));
        }
        Command::Energy(run) => {
            let (written, ratio) = commands::energy(load(&run)?)?;
            println!(
                "max/min ratio {ratio:.4}; wrote {}",
                commands::display(&written)
            );
        }
        Command::Validate(run) => {
            let (written, table, passed) = commands::validate(load(&run)?)?;
            print!("{table}");
            println!(
                "{}; wrote {}",
                if passed {
                    "all checks passed"
                } else {
                    "some checks failed"
                },
                commands::display(&written)
            );
        }
    }
    Ok(())
}

fn dir_of(written: &[PathBuf]) -> String {
    written
        .first()
        .and_then(|p| p.parent())
        .map_or("-".into(), |p| p.display().to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = e.print();
                return ExitCode::from(2);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            ExitCode::from(e.exit_code())
        }
    }
}
