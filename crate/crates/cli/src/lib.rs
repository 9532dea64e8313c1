//! The `cohwash` command line: synthetic data generation, training, evaluation against the
//! baselines, attention inspection and standalone baseline cleaning.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 training divergence,
//! 5 every evaluated method failed.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cohwash_core::kv::KeyValues;
use cohwash_core::Error;

mod commands;
pub mod data;
pub mod svg;

pub use commands::{EvalSpec, Method, TABLE_SCHEMA, TRACE_SCHEMA};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("every method failed: {0}")]
    AllMethodsFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::Config(_)) => 2,
            CliError::Core(Error::Divergence { .. } | Error::NonFiniteGradient(_)) => 4,
            CliError::Core(_) => 3,
            CliError::AllMethodsFailed(_) => 5,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cohwash", version, about = "IMU-referenced EEG motion artifact removal")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic recording (EEG, IMU, clean EEG, coupling) from a config file.
    Generate(GenerateArgs),
    /// Train the denoiser on every condition of a data directory.
    Train(TrainArgs),
    /// Score raw, ASR+ICA and network output with the coherence metric.
    Eval(EvalArgs),
    /// Write one frame's attention weights and correlation matrix with heatmaps.
    AttentionDump(DumpArgs),
    /// Clean every condition with artifact subspace reconstruction.
    BaselineAsr(BaselineArgs),
    /// Clean every condition with FastICA and IMU-coherence component rejection.
    BaselineIca(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Synthesis config (`key = value`); must set `seed`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Replaces the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Receives model.ckpt, model.cfg and history.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Network and schedule overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds both the initialisation and the batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Conditions to train on (default: all).
    #[arg(long, value_delimiter = ',')]
    pub condition: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained network; without it `attention_net` is skipped.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Window lengths in seconds (subset of 10,30,60).
    #[arg(long, value_delimiter = ',')]
    pub window: Vec<usize>,
    /// Methods (subset of raw,asr_ica,attention_net).
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub condition: Vec<String>,
    /// ICA initialisation seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Condition to read (default: the first).
    #[arg(long)]
    pub condition: Option<String>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub condition: Vec<String>,
}

/// Loads a config file; an unreadable path counts as a configuration error.
pub(crate) fn load_config(path: Option<&Path>) -> CliResult<KeyValues> {
    match path {
        None => Ok(KeyValues::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            Ok(KeyValues::parse(&text)?)
        }
    }
}

/// Runs one command and returns the files it wrote.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::AttentionDump(a) => commands::attention_dump(a),
        Command::BaselineAsr(a) => commands::baseline_asr(a),
        Command::BaselineIca(a) => commands::baseline_ica(a),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> CliResult<Vec<PathBuf>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    run(&cli)
}

/// Caps the global thread pool from `COHWASH_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("COHWASH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("COHWASH_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let code = |e: Error| CliError::Core(e).exit_code();
        assert_eq!(code(Error::Config("x".into())), 2);
        assert_eq!(code(Error::Empty("x".into())), 3);
        assert_eq!(code(Error::Divergence { epoch: 1, component: "coh", value: 1e9 }), 4);
        assert_eq!(CliError::AllMethodsFailed("x".into()).exit_code(), 5);
    }

    #[test]
    fn parses_list_flags() {
        let cli = Cli::try_parse_from(["cohwash", "eval", "--data", "d", "--out", "o", "--window", "10,30", "--method", "raw"]).unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        assert_eq!(a.window, [10, 30]);
        assert_eq!(a.method, ["raw"]);
    }

    #[test]
    fn missing_config_file_is_a_config_error() {
        let err = load_config(Some(Path::new("/nonexistent/cfg"))).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
