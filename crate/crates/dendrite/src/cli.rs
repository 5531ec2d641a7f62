//! Argument parsing and dispatch. Every invocation runs one pipeline, writes
//! its outputs plus a manifest, and maps failures to a distinct exit status.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{load_config, Protocol, RunConfig};
use crate::error::{exit, AppError, AppResult};
use crate::io::{self, Manifest, OutputSet};
use crate::run;

#[derive(Debug, Parser)]
#[command(name = "dendrite", version, about = "Dendritic polymer network simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// TOML run configuration.
    pub config: PathBuf,
    /// Output directory, overriding the one in the config.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Global seed, overriding the one in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the configured cell and write its topology and pristine state.
    Grow(RunArgs),
    /// Quasi-static output sweep.
    Sweep(RunArgs),
    /// Rectification coefficient of every electrode configuration.
    Rectify(RunArgs),
    /// Inter-gating transfer curves.
    Transfer(RunArgs),
    /// Multiply-accumulate pulse schedule.
    Mac(RunArgs),
    /// WRITE/READ/REST bit-pattern sequence.
    Sequence {
        #[command(flatten)]
        args: RunArgs,
        /// Continue from a saved state instead of the pristine cell.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Signatures of several spatial projections and their separation.
    Signature(RunArgs),
    /// Inter- versus intra-device signature distances.
    Uniqueness(RunArgs),
    /// Parse and check a configuration without running it.
    Validate { config: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Grow(_) => "grow",
            Command::Sweep(_) => "sweep",
            Command::Rectify(_) => "rectify",
            Command::Transfer(_) => "transfer",
            Command::Mac(_) => "mac",
            Command::Sequence { .. } => "sequence",
            Command::Signature(_) => "signature",
            Command::Uniqueness(_) => "uniqueness",
            Command::Validate { .. } => "validate",
        }
    }

    fn protocol(&self) -> Option<Protocol> {
        match self {
            Command::Sweep(_) => Some(Protocol::Sweep),
            Command::Rectify(_) => Some(Protocol::Rectify),
            Command::Transfer(_) => Some(Protocol::Transfer),
            Command::Mac(_) => Some(Protocol::Mac),
            Command::Sequence { .. } => Some(Protocol::Sequence),
            Command::Signature(_) => Some(Protocol::Signature),
            Command::Uniqueness(_) => Some(Protocol::Uniqueness),
            Command::Grow(_) | Command::Validate { .. } => None,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status. Results go to `stdout`, a one-line diagnostic to `stderr`.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return exit::OK;
            }
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            let _ = writeln!(stderr, "{}", first.trim());
            return exit::USAGE;
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            let _ = writeln!(stdout, "{summary}");
            exit::OK
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", one_line(&e.to_string()));
            e.exit_code()
        }
    }
}

fn one_line(s: &str) -> String {
    s.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("; ")
}

/// Runs a parsed command and returns its summary line.
pub fn execute(command: &Command) -> AppResult<String> {
    let args = match command {
        Command::Validate { config } => return validate(config),
        Command::Sequence { args, .. } => args,
        Command::Grow(a)
        | Command::Sweep(a)
        | Command::Rectify(a)
        | Command::Transfer(a)
        | Command::Mac(a)
        | Command::Signature(a)
        | Command::Uniqueness(a) => a,
    };
    let bytes = std::fs::read(&args.config).map_err(|e| AppError::io(&args.config, e))?;
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    }
    if let Some(wanted) = command.protocol() {
        if config.protocol() != Some(wanted) {
            let found = config.protocol().map_or("none".to_string(), |p| format!("[{}]", p.name()));
            return Err(AppError::config(format!(
                "subcommand `{}` needs a [{}] section; the config has {found}",
                command.name(),
                wanted.name()
            )));
        }
    }
    let initial = match command {
        Command::Sequence { state: Some(path), .. } => Some(io::load_state(path)?),
        _ => None,
    };
    let dir = args.output.clone().unwrap_or_else(|| config.output_dir());
    let mut out = OutputSet::new(&dir)?;
    out.protect(&args.config);
    for p in &config.cell.topology {
        out.protect(&config.base_dir.join(p));
    }
    if let Command::Sequence { state: Some(path), .. } = command {
        out.protect(path);
    }
    let summary = match command {
        Command::Grow(_) => run::grow(&config, &mut out),
        Command::Sweep(_) => run::sweep(&config, &mut out),
        Command::Rectify(_) => run::rectify(&config, &mut out),
        Command::Transfer(_) => run::transfer(&config, &mut out),
        Command::Mac(_) => run::mac(&config, &mut out),
        Command::Sequence { .. } => run::sequence(&config, initial, &mut out),
        Command::Signature(_) => run::signature(&config, &mut out),
        Command::Uniqueness(_) => run::uniqueness(&config, &mut out),
        Command::Validate { .. } => unreachable!("handled above"),
    }?;
    let manifest = manifest(command.name(), &args.config, &bytes, &config);
    out.finish(manifest)?;
    Ok(format!("{}: {summary} (outputs in {})", command.name(), dir.display()))
}

fn validate(path: &Path) -> AppResult<String> {
    let config = load_config(path)?;
    config.build_cell()?;
    Ok("config OK".into())
}

pub fn manifest(command: &str, config_path: &Path, config_bytes: &[u8], config: &RunConfig) -> Manifest {
    Manifest {
        format: io::MANIFEST_FORMAT.into(),
        version: io::FORMAT_VERSION,
        tool: env!("CARGO_PKG_NAME").into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seed: config.seed,
        config_sha256: io::sha256_hex(config_bytes),
        config_path: config_path.display().to_string(),
        resolved_config: serde_json::to_value(config).expect("config serializes"),
        outputs: Vec::new(),
    }
}
