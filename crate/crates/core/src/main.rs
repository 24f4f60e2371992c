//! `dgc-bdris` command line.
//!
//! Exit status: 0 on success, 1 when `validate` finds a violated invariant,
//! 2 on usage, configuration, I/O or solver errors.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dgc_bdris::channel::SystemConfig;
use dgc_bdris::error::Result;
use dgc_bdris::harness::{self, ExperimentRow, ExperimentSpec, Execution, Progress};
use dgc_bdris::selftest;
use dgc_bdris::solver::{Architecture, SolveOptions};

#[derive(Parser)]
#[command(name = "dgc-bdris", version, about = "BD-RIS sum-rate simulator with dynamic cell grouping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and print the result as JSON.
    Run {
        #[command(flatten)]
        common: Common,
        /// Architecture to solve.
        #[arg(long, default_value = "cw-dgc")]
        arch: Architecture,
        /// Channel realization index.
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Include the surface matrices and precoder in the JSON.
        #[arg(long)]
        dump_matrices: bool,
    },
    /// Run the sweep described by a config file and write CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Override the config's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the config's architecture list.
        #[arg(long, value_delimiter = ',')]
        arch: Option<Vec<Architecture>>,
    },
    /// Compare architectures on one scenario and write CSV.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Comma-separated labels; all architectures when absent.
        #[arg(long, value_delimiter = ',')]
        arch: Option<Vec<Architecture>>,
    },
    /// Check solver invariants on random instances.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Instances per check.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// No progress on stderr.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn system(&self) -> Result<SystemConfig> {
        let mut system = match &self.config {
            Some(path) => harness::parse_system(&read(path)?)?,
            None => SystemConfig::default(),
        };
        if let Some(seed) = self.seed {
            system.seed = seed;
        }
        Ok(system)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())).into())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes)?,
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn experiment(spec: &ExperimentSpec, quiet: bool) -> Result<Vec<ExperimentRow>> {
    let report = |p: Progress| {
        if !quiet {
            let status = if p.failed { " FAILED" } else { "" };
            eprintln!("[{}/{}] {} {}={} trial {}{status}", p.done, p.total, p.architecture, spec.axis.name(), p.sweep_value, p.trial);
        }
    };
    harness::run_experiment_with(spec, &SolveOptions::default(), Execution::Parallel, report)
}

fn write_rows(rows: &[ExperimentRow], out: Option<&Path>) -> Result<()> {
    let mut buf = Vec::new();
    harness::write_csv(rows, &mut buf)?;
    emit(out, &buf)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { common, arch, trial, dump_matrices } => {
            let system = common.system()?;
            let report = harness::run_single(&system, trial, arch, &SolveOptions::default(), dump_matrices)?;
            if !common.quiet {
                eprintln!("{arch}: {:.6} bits/s/Hz after {} outer iterations", report.result.sum_rate, report.result.outer_iterations);
            }
            let mut json = serde_json::to_vec_pretty(&report)?;
            json.push(b'\n');
            emit(common.out.as_deref(), &json)?;
        }
        Command::Sweep { common, trials, arch } => {
            let Some(path) = &common.config else {
                return Err(dgc_bdris::error::Error::Config { line: None, message: "sweep needs --config".into() });
            };
            let mut spec = harness::parse_experiment(&read(path)?)?;
            if let Some(seed) = common.seed {
                spec.system.seed = seed;
            }
            if let Some(t) = trials {
                spec.trials = t;
            }
            if let Some(a) = arch {
                spec.architectures = a;
            }
            let out = common.out.clone().or(spec.output.clone());
            let rows = experiment(&spec, common.quiet)?;
            write_rows(&rows, out.as_deref())?;
        }
        Command::Compare { common, trials, arch } => {
            let system = common.system()?;
            let spec = ExperimentSpec::compare(system, arch.unwrap_or_else(|| Architecture::ALL.to_vec()), trials);
            let rows = experiment(&spec, common.quiet)?;
            write_rows(&rows, common.out.as_deref())?;
        }
        Command::Validate { seed, trials, quiet } => {
            let report = selftest::run(seed, trials)?;
            for c in &report.checks {
                if !quiet || !c.passed() {
                    let status = if c.passed() { "ok" } else { "FAIL" };
                    println!("{status:4} {:40} {:>3}/{:<3} worst {:.3e} (tol {:.0e})", c.name, c.instances - c.failures, c.instances, c.worst, c.tol);
                }
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
