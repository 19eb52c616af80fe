//! The `perce` command line: data generation, training, scoring, evaluation
//! and a loopback scoring server.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod serve;

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use perce_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configs or inputs (exit 2).
    Usage(String),
    /// Remote scorer or filesystem failures (exit 3).
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_BACKEND,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Backend { .. } | Error::Io { .. } | Error::NonFinite(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "perce", version, about = "Persona-contrast token scoring and weighted training on a tiny transformer")]
pub struct Cli {
    /// Override every seed the command uses.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic persona corpus as JSONL.
    GenData(GenDataArgs),
    /// Train a model and write checkpoints, metrics and a manifest.
    Train(TrainArgs),
    /// Write per-token persona-influence scores as JSONL.
    Score(ScoreArgs),
    /// Evaluate personal-token identification against gold masks.
    Eval(EvalArgs),
    /// Serve a checkpoint over the remote scoring protocol.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Default,
    Paraphrased,
    SlotHeavy,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Generator spec (JSON).
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// Built-in spec to use instead of a file.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (JSON with optional `model`, `train` and `template` sections).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Local,
    Remote,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_enum, default_value = "local")]
    pub backend: BackendKind,
    /// Checkpoint for the local backend.
    #[arg(long, required_if_eq("backend", "local"))]
    pub checkpoint: Option<PathBuf>,
    /// Base URL of the remote backend.
    #[arg(long, required_if_eq("backend", "remote"))]
    pub endpoint: Option<String>,
    /// Prompt template (JSON) used to build remote contexts; defaults to the
    /// built-in template.
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Score above which a token is flagged personal.
    #[arg(long, default_value_t = perce_core::scoring::DEFAULT_PERSONAL_THRESHOLD)]
    pub threshold: f64,
    /// Extra attempts per remote request.
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    /// Remote request timeout in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// The test split when the data has one, otherwise every record.
    Auto,
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report directory.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = perce_core::scoring::DEFAULT_PERSONAL_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value = "auto")]
    pub split: SplitArg,
    /// Skip greedy decoding (ROUGE-L / METEOR).
    #[arg(long)]
    pub no_generation: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
