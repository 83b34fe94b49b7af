//! Command-line front end for continual-learning experiments.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use subnetcl_core::til::TilMode;

use crate::commands::{AnalyzeSource, RunArgs};
pub use crate::error::CliError;
use crate::experiment::Overrides;

#[derive(Debug, Parser)]
#[command(name = "subnetcl", version, about = "Subnetwork continual-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunFlags {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
    /// Percent of weights per task; overrides the config.
    #[arg(long)]
    capacity: Option<f64>,
    #[arg(long, value_parser = ["wsn", "softnet"])]
    mode: Option<String>,
}

impl RunFlags {
    fn overrides(&self) -> Result<Overrides, CliError> {
        Ok(Overrides {
            seed: self.seed,
            capacity: self.capacity,
            mode: self.mode.as_deref().map(str::parse::<TilMode>).transpose()?,
        })
    }

    fn args(&self) -> Result<RunArgs<'_>, CliError> {
        Ok(RunArgs {
            config: &self.config,
            out: &self.out,
            force: self.force,
            overrides: self.overrides()?,
        })
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Task-incremental run.
    Til(RunFlags),
    /// Few-shot class-incremental run.
    Fscil(RunFlags),
    /// Compress a directory of task masks into one bundle.
    EncodeMasks {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Expand a bundle back into task mask files.
    DecodeMasks {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Mask directory to copy layer shapes and capacities from.
        #[arg(long)]
        like: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Mask correlation, reuse, ablation and smoothness tables.
    Analyze {
        #[arg(long, conflicts_with = "run", required_unless_present = "run")]
        config: Option<PathBuf>,
        /// Existing til run to regenerate and analyze.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        capacity: Option<f64>,
        #[arg(long, value_parser = ["wsn", "softnet"])]
        mode: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Verify a run directory and print its headline numbers.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Til(f) => commands::til(f.args()?),
        Command::Fscil(f) => commands::fscil(f.args()?),
        Command::EncodeMasks { input, out, force } => {
            let b = commands::encode(&input, &out, force)?;
            println!(
                "encoded {} tasks over {} weights: {} payload bits, compression rate {}",
                b.num_tasks,
                b.numel(),
                b.payload_bits,
                report::num(b.compression_rate())
            );
            Ok(())
        }
        Command::DecodeMasks { input, out, like, force } => {
            let n = commands::decode(&input, &out, like.as_deref(), force)?;
            println!("decoded {n} task masks into {}", out.display());
            Ok(())
        }
        Command::Analyze {
            config,
            run,
            out,
            seed,
            capacity,
            mode,
            force,
        } => {
            let source = match (&config, &run) {
                (Some(path), None) => AnalyzeSource::Config {
                    path,
                    overrides: Overrides {
                        seed,
                        capacity,
                        mode: mode.as_deref().map(str::parse::<TilMode>).transpose()?,
                    },
                },
                (None, Some(dir)) => {
                    if seed.is_some() || capacity.is_some() || mode.is_some() {
                        return Err(CliError::config("--run reuses the stored settings; drop --seed/--capacity/--mode"));
                    }
                    AnalyzeSource::Run(dir)
                }
                _ => return Err(CliError::config("pass exactly one of --config or --run")),
            };
            commands::analyze(source, &out, force)
        }
        Command::Report { run } => {
            print!("{}", commands::report(&run)?);
            Ok(())
        }
    }
}

/// Parses `argv` (including the program name) and runs it.
pub fn run<I, T>(argv: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            let text = e.to_string();
            let msg: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            return Err(CliError::config(msg.join(" ").trim_start_matches("error: ").to_string()));
        }
    };
    dispatch(cli)
}

/// Runs and maps the outcome to a process exit code, printing failures as a
/// single line on stderr.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run(argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
