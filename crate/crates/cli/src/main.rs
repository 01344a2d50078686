//! `sfda`: command-line driver for source-free domain adaptation runs.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact {}: {hint}", path.display())]
    Missing { path: PathBuf, hint: String },
    #[error(transparent)]
    Core(sfda_core::Error),
    #[error("{0}")]
    Runtime(String),
}

impl From<sfda_core::Error> for CliError {
    fn from(e: sfda_core::Error) -> Self {
        match e {
            sfda_core::Error::Config(m) => CliError::Config(m),
            sfda_core::Error::MissingArtifact { path, hint } => CliError::Missing { path, hint },
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } => 3,
            CliError::Core(_) | CliError::Runtime(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sfda", version, about = "Source-free domain adaptation for optic disc/cup segmentation")]
pub struct Cli {
    /// Run configuration (TOML). Without it the desk synthetic benchmark and
    /// published defaults are used.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the unreliable-set ratio.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Keep the intra-domain loss during stage 2.
    #[arg(long, global = true)]
    pub stage2_keep_intra: bool,
    /// Disable largest-connected-component filtering before scoring.
    #[arg(long, global = true)]
    pub no_lcc_filter: bool,
    /// Validate the configuration and report planned outputs without writing.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true, env = "SFDA_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic source and target datasets.
    Synth,
    /// Supervised training on the labelled source set.
    TrainSource {
        /// Train on labelled target data instead (upper bound).
        #[arg(long)]
        target_only: bool,
    },
    /// Split the target set into reliable and unreliable subsets.
    Partition,
    /// Two-stage teacher–student adaptation.
    Adapt {
        #[arg(long, value_enum, default_value_t = VariantArg::Full)]
        variant: VariantArg,
    },
    /// Score checkpoints on the target test set.
    Eval(EvalArgs),
    /// Ablation sweeps.
    Ablate {
        #[command(subcommand)]
        kind: AblateKind,
    },
    /// Render bar charts from evaluation reports and ablation tables.
    Plot {
        /// Published benchmark quoted alongside the run.
        #[arg(long, default_value = "rimone")]
        reference: String,
    },
    /// Write pseudo-label, mask and mixed-sample debug images.
    Dump {
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Teacher checkpoint (defaults to the source model).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to score; by default every known run checkpoint present.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub label: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum AblateKind {
    Sigma {
        #[arg(long, value_delimiter = ',', default_values_t = sfda_core::pipeline::SIGMA_GRID)]
        sigmas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
    },
    Components {
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Baseline,
    Dpm,
    Reliable,
    ReliableDpm,
    Full,
}

impl From<VariantArg> for sfda_core::pipeline::Variant {
    fn from(v: VariantArg) -> Self {
        use sfda_core::pipeline::Variant;
        match v {
            VariantArg::Baseline => Variant::Baseline,
            VariantArg::Dpm => Variant::Dpm,
            VariantArg::Reliable => Variant::Reliable,
            VariantArg::ReliableDpm => Variant::ReliableDpm,
            VariantArg::Full => Variant::Full,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.workers {
        sfda_core::exec::init_workers(n);
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
