//! Library side of the `spdgeom` binary, so that tests can drive commands
//! in-process.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;

use clap::Parser;
use spdgeom::oracles::Kernels;

pub use commands::{bench_file_names, random_scatter, DEFAULT_SEED};
pub use config::{Cli, Command, RunConfig};

/// Exit codes: 0 success, 1 check violations, 2 usage, 3 data, 4 no convergence.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Data(String),
    NotConverged(String),
    CheckFailed(usize),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::NotConverged(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::NotConverged(m) => f.write_str(m),
            CliError::CheckFailed(k) => write!(f, "{k} check(s) reported violations"),
        }
    }
}

impl From<spdgeom::Error> for CliError {
    fn from(e: spdgeom::Error) -> Self {
        use spdgeom::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidInput(_) | E::IncompatibleMethod { .. } | E::Unsupported(_) | E::Parse { .. } => {
                CliError::Usage(msg)
            }
            E::StepTooLarge | E::NotDescent(_) | E::LineSearchFail(_) => CliError::NotConverged(msg),
            _ => CliError::Data(msg),
        }
    }
}

/// Output of a command: text for stdout, warnings for stderr and the exit code.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_kernels(args, &Kernels::default(), stdout, stderr)
}

/// As [`run`], with the kernels used by `check` replaced.
pub fn run_with_kernels<I, T>(args: I, kernels: &Kernels, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let outcome = execute(&cli, kernels);
    let _ = stdout.write_all(outcome.stdout.as_bytes());
    let _ = stderr.write_all(outcome.stderr.as_bytes());
    outcome.code
}

fn execute(cli: &Cli, kernels: &Kernels) -> Outcome {
    let result = resolve_config(cli).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads.unwrap_or(0))
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
        pool.install(|| commands::dispatch(&cli.command, &cfg, kernels))
    });
    result.unwrap_or_else(|e| Outcome { stderr: format!("error: {e}\n"), code: e.code(), ..Default::default() })
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let flags = RunConfig::from_cli(cli);
    let Some(path) = &cli.global.config else {
        return Ok(flags);
    };
    let file = RunConfig::load(path)?;
    if let (Some(a), Some(b)) = (&file.command, &flags.command) {
        if a != b {
            return Err(CliError::Usage(format!("config is for `{a}`, not `{b}`")));
        }
    }
    Ok(flags.overlay(file))
}
