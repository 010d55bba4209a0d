mod bench;
mod commands;
mod fetch;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drf_core::{load_config, Error, RunConfig};

#[derive(Parser)]
#[command(name = "drf", version, about = "Train, evaluate and analyze dendritic resonate-and-fire networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML run configuration. Defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set model.n=8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Parent directory for the timestamped run directory.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Worker threads (default: config `threads`, 0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics.csv and model.ckpt.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split and report spike energy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Frequency response and -3 dB bandwidth of one neuron.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Analyze a trained model instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        neuron: usize,
        #[arg(long, default_value_t = drf_core::analysis::OMEGA_GRID_POINTS)]
        points: usize,
        /// Fraction of the peak magnitude that counts as in-band.
        #[arg(long, default_value_t = drf_core::analysis::half_power())]
        level: f64,
    },
    /// Runtime of the forward and training paths over a length ladder.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sequence lengths.
        #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096, 8192, 16384])]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        /// Samples per timed call.
        #[arg(long, default_value_t = 4)]
        batch: usize,
        /// Shortcut for `--lengths 1024,2048`.
        #[arg(long)]
        quick: bool,
    },
    /// Per-step branch states, potential, threshold and spikes of one neuron.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        neuron: usize,
        /// Test-split sample to drive the network with.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Drive with an all-zero input instead of a dataset sample.
        #[arg(long)]
        zero: bool,
    },
    /// Download the MNIST IDX files into the data directory.
    Fetch {
        #[command(flatten)]
        common: Common,
        /// Base URL holding the four gzipped IDX files.
        #[arg(long)]
        url: Option<String>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("download failed: {0}")]
    Fetch(String),
}

impl CliError {
    /// Stable exit codes: 2 config, 3 data or checkpoint, 4 numeric abort, 1 anything else.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Fetch(_) => 3,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::TaskSpec(_) => 2,
                Error::Data(_) | Error::Checkpoint(_) => 3,
                Error::NumericAbort { .. } => 4,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Config file (or defaults) with overrides applied.
pub fn resolve_config(common: &Common) -> CliResult<RunConfig> {
    let base = match &common.config {
        Some(path) => load_config(path).map_err(Error::from)?,
        None => RunConfig::default(),
    };
    apply_overrides(&base, common)
}

pub fn apply_overrides(base: &RunConfig, common: &Common) -> CliResult<RunConfig> {
    let cfg = base.with_overrides(&common.overrides).map_err(Error::from)?;
    cfg.validate().map_err(Error::from)?;
    Ok(cfg)
}

fn init_threads(common: &Common, cfg_threads: usize) {
    let threads = common.threads.unwrap_or(cfg_threads);
    // A second initialization in the same process is harmless; keep the first.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = resolve_config(&common)?;
            init_threads(&common, cfg.threads);
            commands::train(&common, cfg)
        }
        Command::Eval { common, checkpoint } => {
            init_threads(&common, 0);
            commands::eval(&common, &checkpoint)
        }
        Command::Analyze {
            common,
            checkpoint,
            layer,
            neuron,
            points,
            level,
        } => commands::analyze(&common, checkpoint.as_deref(), layer, neuron, points, level),
        Command::Bench {
            common,
            lengths,
            reps,
            warmup,
            batch,
            quick,
        } => {
            let cfg = resolve_config(&common)?;
            let lengths = if quick { vec![1024, 2048] } else { lengths };
            let threads = common.threads.unwrap_or(cfg.threads);
            bench::run(&common, cfg, &lengths, reps, warmup, batch, threads)
        }
        Command::Inspect {
            common,
            checkpoint,
            layer,
            neuron,
            sample,
            zero,
        } => {
            init_threads(&common, 0);
            commands::inspect(&common, checkpoint.as_deref(), layer, neuron, sample, zero)
        }
        Command::Fetch { common, url } => {
            let cfg = resolve_config(&common)?;
            fetch::run(&cfg, url)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
