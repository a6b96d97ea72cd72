//! Command-line harness for diversified inference-time scaling sweeps.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use divscale_core::backend::mock::{self, MockExit, MockOptions};

use crate::config::{parse_budgets, Overrides, RunConfig, SweepAxis};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "divscale",
    version,
    about = "Diversified inference-time scaling for time-series forecasters"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Loss against sampling budget, swept over temperature or context length.
    ScaleSweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        sweep: Option<SweepArg>,
    },
    /// Every perturbation strategy against the standard-sampling baseline.
    PerturbSweep {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// RobustMSE per strategy class at a fixed budget.
    Robustmse {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON list of valid perturbations, as written by perturb-sweep.
        #[arg(long)]
        valid_set: Option<PathBuf>,
    },
    /// Analytic versus simulated expected minimum and the crossover budget.
    Theory {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Conformance probes against an external backend.
    ValidateBackend {
        #[command(flatten)]
        common: CommonArgs,
        /// Recorded session to replay; replies must match byte for byte.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Input similarity against loss over an intensity grid.
    Similarity {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Serve the built-in echo backend on stdio.
    #[command(hide = true)]
    MockBackend {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SweepArg {
    None,
    Temperature,
    ContextLength,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    /// seasonal-ar, two-point, or external:CMD
    #[arg(long)]
    pub backend: Option<String>,
    /// Comma-separated, e.g. 1,2,4,8
    #[arg(long)]
    pub budgets: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub context_length: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub skip_errors: bool,
}

impl CommonArgs {
    pub fn overrides(&self) -> Result<Overrides, CliError> {
        let budgets = match &self.budgets {
            Some(b) => Some(parse_budgets(b).map_err(|e| CliError::Config(format!("--budgets {e}")))?),
            None => None,
        };
        Ok(Overrides {
            master_seed: self.seed,
            jobs: self.jobs,
            out: self.out.clone(),
            dataset: self.dataset.clone(),
            target: self.target.clone(),
            backend: self.backend.clone(),
            budgets,
            temperature: self.temperature,
            context_length: self.context_length,
            horizon: self.horizon,
            stride: self.stride,
            skip_errors: self.skip_errors,
        })
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides()?)
    }
}

fn with_pool<T>(cfg: &RunConfig, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError>
where
    T: Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Runs one parsed command. Returns the process exit code.
pub fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::ScaleSweep { common, sweep } => {
            let mut cfg = common.resolve()?;
            if let Some(s) = sweep {
                cfg.sweep = match s {
                    SweepArg::None => SweepAxis::None,
                    SweepArg::Temperature => SweepAxis::Temperature,
                    SweepArg::ContextLength => SweepAxis::ContextLength,
                };
            }
            with_pool(&cfg, || commands::scale_sweep(&cfg).map(|_| ()))?;
        }
        Command::PerturbSweep { common } => {
            let cfg = common.resolve()?;
            with_pool(&cfg, || commands::perturb_sweep(&cfg).map(|_| ()))?;
        }
        Command::Robustmse { common, valid_set } => {
            let mut cfg = common.resolve()?;
            if valid_set.is_some() {
                cfg.valid_set = valid_set;
            }
            with_pool(&cfg, || commands::robustmse(&cfg).map(|_| ()))?;
        }
        Command::Theory { common, trials } => {
            let mut cfg = common.resolve()?;
            if let Some(t) = trials {
                cfg.theory_trials = t;
            }
            let outcome = with_pool(&cfg, || commands::theory_cmd(&cfg))?;
            println!(
                "N* = {:.4}; predicted crossover {}; empirical crossover {}",
                outcome.critical_threshold, outcome.predicted_crossover, outcome.empirical_crossover
            );
        }
        Command::ValidateBackend { common, transcript } => {
            let cfg = common.resolve()?;
            commands::validate_backend(&cfg, transcript.as_deref())?;
        }
        Command::Similarity { common } => {
            let cfg = common.resolve()?;
            with_pool(&cfg, || commands::similarity(&cfg).map(|_| ()))?;
        }
        Command::MockBackend { args } => {
            let opts = MockOptions::from_args(args).map_err(CliError::Config)?;
            let exit =
                mock::serve(&opts, std::io::stdin().lock(), std::io::stdout().lock()).map_err(CliError::io("stdio"))?;
            return Ok(if exit == MockExit::Crashed { 3 } else { 0 });
        }
    }
    Ok(0)
}
