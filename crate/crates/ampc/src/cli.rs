//! Command-line definitions and dispatch.
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands;
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "ampc", version, about = "Approximate MPC: datasets, value and policy fitting, closed-loop evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed (falls back to the config file, then 0).
    #[arg(long, global = true, env = "AMPC_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for data generation and sweeps.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Bc,
    Il,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Bc => "bc",
            Method::Il => "il",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample states and label them with SCMPC solves.
    GenData {
        /// quad1d, unicycle, or a problem description JSON file.
        #[arg(long)]
        experiment: Option<String>,
        /// Number of samples (scalar experiment).
        #[arg(long)]
        n: Option<usize>,
        /// Sampling interval `a,b` (scalar experiment).
        #[arg(long, allow_hyphen_values = true)]
        interval: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the value networks to a dataset, or register the exact scalar value.
    FitValue {
        #[arg(long, required_unless_present = "exact_value")]
        data: Option<PathBuf>,
        /// Use V(x) = x^2 instead of training (scalar experiment only).
        #[arg(long)]
        exact_value: bool,
        #[arg(long)]
        experiment: Option<String>,
        /// Search the full learning-rate / decay grid.
        #[arg(long)]
        grid: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy by imitation under the look-ahead loss or by behavioral cloning.
    FitPolicy {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        data: PathBuf,
        /// Value artifact; required for il, used for the suboptimality estimate otherwise.
        #[arg(long)]
        value: Option<PathBuf>,
        #[arg(long)]
        grid: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop rollouts from given initial states.
    Simulate {
        /// Policy artifact directory.
        #[arg(long, conflicts_with_all = ["pistar", "mpc"])]
        policy: Option<PathBuf>,
        /// Use the gridded look-ahead minimizer (needs --value).
        #[arg(long)]
        pistar: bool,
        /// Use the SCMPC itself (needs --experiment).
        #[arg(long)]
        mpc: bool,
        #[arg(long)]
        value: Option<PathBuf>,
        #[arg(long)]
        experiment: Option<String>,
        /// Initial state `a,b,...`; repeat for several trajectories.
        #[arg(long = "x0", required = true, allow_hyphen_values = true)]
        x0: Vec<String>,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Benchmark suite over random initial states for IL, BC and pi*.
    Evaluate {
        #[arg(long)]
        value: PathBuf,
        #[arg(long)]
        il: Option<PathBuf>,
        #[arg(long)]
        bc: Option<PathBuf>,
        /// Skip the gridded pi* row.
        #[arg(long)]
        no_pistar: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distance of IL and BC policies to {x, -x} across training-set sizes.
    Consistency {
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Sampling interval `a,b`.
        #[arg(long, allow_hyphen_values = true)]
        interval: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot-ready CSVs: policy sweeps (quad1d) or trajectories and value samples (unicycle).
    Report {
        #[arg(long)]
        il: PathBuf,
        #[arg(long)]
        bc: PathBuf,
        #[arg(long)]
        value: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Context shared by all commands.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub config: RunConfig,
    pub seed: u64,
    pub workers: usize,
}

impl Ctx {
    pub fn new(global: &GlobalArgs) -> Result<Self> {
        let config = RunConfig::load(global.config.as_deref())?;
        let seed = global.seed.or(config.seed).unwrap_or(0);
        let workers = global.workers.or(config.workers).unwrap_or(1).max(1);
        Ok(Self { config, seed, workers })
    }
}

/// Exit status of a successful command run: 0, or 2 when some rows were flagged.
pub fn run(cli: Cli) -> Result<i32> {
    let ctx = Ctx::new(&cli.global)?;
    match cli.command {
        Command::GenData { experiment, n, interval, out } => commands::gen_data(&ctx, experiment, n, interval, &out),
        Command::FitValue { data, exact_value, experiment, grid, out } => {
            commands::fit_value(&ctx, data.as_deref(), exact_value, experiment, grid, &out)
        }
        Command::FitPolicy { method, data, value, grid, out } => commands::fit_policy(&ctx, method, &data, value.as_deref(), grid, &out),
        Command::Simulate { policy, pistar, mpc, value, experiment, x0, steps, out } => {
            commands::simulate(&ctx, policy.as_deref(), pistar, mpc, value.as_deref(), experiment, &x0, steps, &out)
        }
        Command::Evaluate { value, il, bc, no_pistar, out } => commands::evaluate(&ctx, &value, il.as_deref(), bc.as_deref(), !no_pistar, &out),
        Command::Consistency { ns, seeds, interval, out } => commands::consistency(&ctx, ns, seeds, interval, &out),
        Command::Report { il, bc, value, out } => commands::report(&ctx, &il, &bc, value.as_deref(), &out),
    }
}
