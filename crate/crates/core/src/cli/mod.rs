//! The `probekit` command line.
//!
//! Every subcommand writes its outputs plus a `provenance.json` into `--out`.
//! Settings come from flags first, then from the `--config` file.

mod analyze;
mod config;
mod eval;
mod features;
mod probe;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Error;

pub use config::{Overlay, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "probekit", version, about = "Linear-probe benchmarks for fixed audio embeddings")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// key=value settings file; flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Log-mel spectrograms for every WAV file in a directory.
    Features(features::FeaturesArgs),
    /// Pool spectrogram files into one embedding set.
    Embed(features::EmbedArgs),
    /// Train a probe or score embeddings with one.
    #[command(subcommand)]
    Probe(probe::ProbeCommand),
    /// Cross-validation or fixed-split evaluation.
    Eval(eval::EvalArgs),
    /// Label-vector clustering, similarity and t-SNE of trained probes.
    Analyze(analyze::AnalyzeArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Features(_) => "features",
            Command::Embed(_) => "embed",
            Command::Probe(probe::ProbeCommand::Train(_)) => "probe train",
            Command::Probe(probe::ProbeCommand::Predict(_)) => "probe predict",
            Command::Eval(_) => "eval",
            Command::Analyze(_) => "analyze",
        }
    }
}

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs; exit code 2.
    Usage(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(e) if e.is_usage() => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(Error::Io(e))
    }
}

pub(crate) type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Fails with a usage error unless `path` exists.
pub(crate) fn require_path(flag: &str, path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("--{flag}: {} does not exist", path.display())))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Records an input file by name and content digest, so provenance does not
/// depend on where the file lives.
pub(crate) fn digest_input(inputs: &mut BTreeMap<String, String>, role: &str, path: &Path) -> CliResult<()> {
    let bytes = fs::read(path)?;
    inputs.insert(role.to_string(), sha256_hex(&bytes));
    Ok(())
}

pub(crate) fn write_text(dir: &Path, name: &str, text: &str) -> CliResult<()> {
    fs::write(dir.join(name), text)?;
    log::debug!("wrote {}", dir.join(name).display());
    Ok(())
}

#[derive(Serialize)]
struct ProvenanceFile<'a, T: Serialize> {
    command: &'a str,
    tool_version: &'a str,
    seed: u64,
    config_hash: String,
    settings: &'a BTreeMap<String, String>,
    inputs: &'a BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<T>,
}

/// Runs the parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> CliResult<()> {
    let overlay = match &cli.global.config {
        Some(path) => {
            require_path("config", path)?;
            Overlay::parse(&fs::read_to_string(path)?)?
        }
        None => Overlay::default(),
    };
    let mut rc = RunConfig::new(cli.command.name(), overlay);
    let jobs = rc.take("jobs", cli.global.jobs)?;
    rc.forget("jobs");
    let threads = match jobs {
        Some(0) => return Err(usage("--jobs must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rc.seed = rc.take("seed", cli.global.seed)?.unwrap_or(0);
    let out: Option<PathBuf> = rc.take_path("out", cli.global.out)?;
    rc.out = out.ok_or_else(|| usage("--out DIR is required"))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| usage(format!("cannot start {threads} workers: {e}")))?;
    pool.install(|| match cli.command {
        Command::Features(args) => features::run_features(&mut rc, args),
        Command::Embed(args) => features::run_embed(&mut rc, args),
        Command::Probe(probe::ProbeCommand::Train(args)) => probe::run_train(&mut rc, args),
        Command::Probe(probe::ProbeCommand::Predict(args)) => probe::run_predict(&mut rc, args),
        Command::Eval(args) => eval::run_eval(&mut rc, args),
        Command::Analyze(args) => analyze::run_analyze(&mut rc, args),
    })
}

impl RunConfig {
    /// Writes `provenance.json` into the output directory.
    pub(crate) fn write_provenance<T: Serialize>(
        &self,
        inputs: &BTreeMap<String, String>,
        details: Option<T>,
    ) -> CliResult<()> {
        let doc = ProvenanceFile {
            command: &self.command,
            tool_version: crate::VERSION,
            seed: self.seed,
            config_hash: self.hash(),
            settings: &self.settings,
            inputs,
            details,
        };
        let mut text = serde_json::to_string_pretty(&doc).map_err(Error::from)?;
        text.push('\n');
        write_text(&self.out, "provenance.json", &text)
    }

    pub(crate) fn create_out(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out)?;
        Ok(())
    }
}

/// Entry point of the `probekit` binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PROBEKIT_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("probekit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
