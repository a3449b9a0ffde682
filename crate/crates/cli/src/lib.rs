//! Command-line front end: system files, the analysis pipeline and its
//! reports, bounded-solution output and coupling sweeps.

pub mod error;
pub mod format;
pub mod pipeline;
pub mod render;
pub mod solve;
pub mod sweep;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::CliError;
use pipeline::{Overrides, Settings, TOL_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Human,
    Machine,
}

#[derive(Debug, Parser)]
#[command(name = "roughness", version, about = "Dichotomy certificates for coupled block systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// System file (JSON).
    pub path: PathBuf,
    /// Fraction of each block's spectral gap given up for the decay constants.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Accuracy target; also read from ROUGHNESS_TOL.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Truncation of the half-line.
    #[arg(long)]
    pub tinf: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
    /// Seed of the sampling checks.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Human)]
    pub format: OutputFormat,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides { margin: self.margin, tol: self.tol, t_infinity: self.tinf, grid_step: self.grid_step, seed: self.seed, samples: None }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every check on a system and report.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Compute a bounded solution and write trajectory and plot files.
    Solve {
        #[command(flatten)]
        common: Common,
        /// `zero`, `basis:K` or a comma-separated vector in the stable subspace.
        #[arg(long, default_value = "basis:1")]
        initial: String,
        #[arg(long)]
        horizon: Option<f64>,
        /// Output prefix; writes PREFIX.traj.tsv and PREFIX.plot.tsv.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Scale the couplings over a range and tabulate the conditions.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
    },
}

fn execute(cli: &Cli, env_tol: Option<&str>) -> Result<String, CliError> {
    let common = match &cli.command {
        Command::Analyze { common } | Command::Solve { common, .. } | Command::Sweep { common, .. } => common,
    };
    let file = format::read_system_file(&common.path)?;
    let settings = Settings::resolve(&file, &common.overrides(), env_tol)?;
    let machine = common.format == OutputFormat::Machine;
    let text = match &cli.command {
        Command::Analyze { .. } => {
            let a = pipeline::analyze(&file, &settings)?;
            if machine {
                render::analysis_json(&a).to_string()
            } else {
                render::analysis_human(&a)
            }
        }
        Command::Solve { initial, horizon, out, .. } => {
            let initial: solve::InitialData = initial.parse()?;
            let sol = solve::solve(&file, &settings, &initial, *horizon)?;
            let (t, p) = sol.write(out)?;
            let files = (t.display().to_string(), p.display().to_string());
            let files = Some((files.0.as_str(), files.1.as_str()));
            if machine {
                render::solution_json(&sol, files).to_string()
            } else {
                render::solution_human(&sol, files)
            }
        }
        Command::Sweep { from, to, steps, .. } => {
            let s = sweep::sweep(&file, &settings, *from, *to, *steps)?;
            if machine {
                render::sweep_json(&s).to_string()
            } else {
                render::sweep_human(&s)
            }
        }
    };
    Ok(text)
}

/// Runs a parsed command line, writing the report to `out` and diagnostics
/// to `err`. Returns the exit status.
pub fn run(cli: &Cli, env_tol: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match execute(cli, env_tol) {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            if !text.ends_with('\n') {
                let _ = out.write_all(b"\n");
            }
            0
        }
        Err(e) => {
            let machine = match &cli.command {
                Command::Analyze { common } | Command::Solve { common, .. } | Command::Sweep { common, .. } => {
                    common.format == OutputFormat::Machine
                }
            };
            if machine {
                let _ = writeln!(err, "{}", render::error_json(&e));
            } else {
                let _ = writeln!(err, "error ({}): {e}", e.kind());
            }
            e.exit_code()
        }
    }
}

/// The tolerance override from the environment, if set.
pub fn env_tolerance() -> Option<String> {
    std::env::var(TOL_ENV).ok()
}
