//! `ahflow`: normalized Ricci flow runs on asymptotically hyperbolic
//! warped products.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 io error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ahflow::runner::{self, RunConfig};
use ahflow::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ahflow", version, about = "Normalized Ricci flow on asymptotically hyperbolic warped products")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the initial data, run the flow and write a run directory.
    Simulate {
        config: PathBuf,
        /// Overrides `output` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the initial metric of a config as initial.csv plus manifest.
    MakeInitial {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the verification suites on a metric file or a run directory.
    Verify {
        target: PathBuf,
        /// Supplies n, γ and ε for metric files without a manifest.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Re-derive fits and flags from a stored run directory.
    Report { run: PathBuf },
    /// Run every (amplitude, γ) pair of the config's sweep section concurrently.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, out: Option<PathBuf>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut cfg = runner::parse_config(&text)?;
    if let Some(out) = out {
        cfg.output = out;
    }
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = load(&config, out)?;
            let outcome = runner::simulate(&cfg)?;
            println!("{}", outcome.dir.display());
            print_json(&outcome.summary.acceptance_flags);
            Ok(if outcome.failed() { 3 } else { 0 })
        }
        Command::MakeInitial { config, out } => {
            let cfg = load(&config, out)?;
            println!("{}", runner::make_initial(&cfg)?.display());
            Ok(0)
        }
        Command::Verify { target, config } => {
            let cfg = match config {
                Some(c) => load(&c, None)?,
                None => RunConfig::default(),
            };
            print_json(&runner::verify(&cfg, &target)?);
            Ok(0)
        }
        Command::Report { run } => {
            print_json(&runner::report(&run)?);
            Ok(0)
        }
        Command::Sweep { config, out } => {
            let cfg = load(&config, out)?;
            let mut code = 0;
            for o in runner::sweep(&cfg)? {
                match o {
                    Ok(r) => {
                        println!("{} {:?}", r.dir.display(), r.summary.termination);
                        if r.failed() {
                            code = 3;
                        }
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        code = code.max(e.exit_code() as u8);
                    }
                }
            }
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
