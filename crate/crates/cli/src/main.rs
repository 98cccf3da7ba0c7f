mod config;
mod inspect;
mod narrate;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{CliConfig, ConfigError, Overrides};

/// Exit codes. Nothing else is ever returned.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    /// Environment problem: unreadable config or memory, I/O failure,
    /// or a failed config-check.
    pub const FAILURE: u8 = 1;
    pub const FAILED_MAX_REPAIRS: u8 = 2;
    pub const BACKEND_ERROR: u8 = 3;
    pub const USAGE: u8 = 64;
    /// Input data that does not hold up: unknown memory id, malformed
    /// task or report file.
    pub const DATA: u8 = 65;
}

/// A command's way out: the exit code plus an optional message for stderr.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub message: Option<String>,
}

impl Exit {
    pub fn code(code: u8) -> Self {
        Self { code, message: None }
    }

    pub fn with(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: Some(message.into()),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::with(exit::USAGE, message)
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self::with(exit::FAILURE, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::with(exit::DATA, message)
    }
}

impl From<ConfigError> for Exit {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::File(m) => Exit::failure(m),
            ConfigError::Invalid(m) => Exit::usage(format!("invalid configuration: {m}")),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "repairgraph", version, about = "Generate, run and repair Python functions with an LLM")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON config file (default: ./repairgraph.json when present)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Mock playbook file, or a directory holding <task_id>.json playbooks
    #[arg(long, global = true, value_name = "PATH")]
    pub mock: Option<PathBuf>,
    /// Replay responses from this cassette (record into it in record mode)
    #[arg(long, global = true, value_name = "FILE")]
    pub cassette: Option<PathBuf>,
    /// Memory snapshot file
    #[arg(long, global = true, value_name = "FILE")]
    pub memory: Option<PathBuf>,
    /// Directory for JSON run reports
    #[arg(long, global = true, value_name = "DIR")]
    pub report_dir: Option<PathBuf>,
    /// Sandbox timeout per execution, in seconds
    #[arg(long, global = true, value_name = "SECS")]
    pub timeout: Option<f64>,
    /// Repair rounds allowed per task
    #[arg(long, global = true, value_name = "N")]
    pub max_repairs: Option<u32>,
    /// Memory hits retrieved per search
    #[arg(long, global = true, value_name = "N")]
    pub k: Option<usize>,
    /// Similarity at or above which a prior bug counts as the same bug
    #[arg(long, global = true, value_name = "SCORE", allow_negative_numbers = true)]
    pub tau: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a function for one task and repair it until it runs
    Run(run::RunArgs),
    /// Run every task file in a corpus directory
    Batch(run::BatchArgs),
    /// Inspect the bug memory
    #[command(subcommand)]
    Memory(inspect::MemoryCommand),
    /// Show the node sequence and timings from a run report
    Trace {
        #[arg(value_name = "REPORT")]
        report: PathBuf,
    },
    /// Validate configuration, interpreter and backend
    ConfigCheck,
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

impl Global {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            memory: self.memory.clone(),
            report_dir: self.report_dir.clone(),
            timeout: self.timeout,
            max_repairs: self.max_repairs,
            k: self.k,
            tau: self.tau,
        }
    }

    fn resolve(&self) -> Result<CliConfig, Exit> {
        Ok(CliConfig::resolve(&self.overrides(), &env)?)
    }
}

fn dispatch(cli: Cli) -> Result<u8, Exit> {
    match cli.command {
        Command::Run(args) => run::cmd_run(&cli.global, &cli.global.resolve()?, args),
        Command::Batch(args) => run::cmd_batch(&cli.global, &cli.global.resolve()?, args),
        Command::Memory(cmd) => inspect::cmd_memory(&cli.global.resolve()?, cmd),
        Command::Trace { report } => inspect::cmd_trace(&report),
        Command::ConfigCheck => Ok(inspect::cmd_config_check(&cli.global.overrides(), &env)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(exit) => {
            if let Some(m) = exit.message {
                eprintln!("repairgraph: {m}");
            }
            ExitCode::from(exit.code)
        }
    }
}
