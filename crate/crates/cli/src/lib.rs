//! Command-line driver for policy-aligned CATE experiments.
//!
//! Every subcommand reads an optional JSON [`config::ExperimentConfig`];
//! global flags override the matching config fields. Exit codes: 0 on
//! success, 2 for configuration errors, 3 for data errors, 4 for numerical
//! failures.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use policy_cate::error::{Error, ErrorClass, Result};
use policy_cate::selection::SigmaGrid;
use policy_cate::surrogate::Family;

use commands::{Baseline, EvalTarget, GridSpec};
use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "policy-cate",
    version,
    about = "Policy-aligned CATE estimation experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.directory`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Base seed (overrides `dgp.seed` and `table2.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replication count (overrides `dgp.replications` and `table2.replications`).
    #[arg(long, global = true)]
    pub replications: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Oracle,
    Mail,
    NoMail,
    Ols,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw datasets from the configured process, one CSV per replication.
    Simulate {
        /// Include the true effect as a `tau_true` column.
        #[arg(long)]
        with_oracle: bool,
    },
    /// Fit the configured model to a dataset CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a saved model or a baseline on oracle evaluation draws.
    Evaluate {
        #[arg(
            long,
            conflicts_with = "baseline",
            required_unless_present = "baseline"
        )]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
    },
    /// Cross-validate the threshold scale over a grid.
    Cv {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated σ values, `inf` for the MSE limit.
        #[arg(long)]
        grid: Option<SigmaGrid>,
        #[arg(long)]
        folds: Option<usize>,
        /// Also refit at every σ and score against the oracle.
        #[arg(long)]
        oracle: bool,
    },
    /// Tabulate the surrogate objective of a single effect for several σ.
    Curve {
        #[arg(long, allow_hyphen_values = true)]
        tau0: f64,
        #[arg(long, allow_hyphen_values = true)]
        cost: f64,
        #[arg(long, default_value = "normal")]
        family: Family,
        /// Comma-separated σ values.
        #[arg(long, default_value = "0.5,1,2")]
        sigmas: SigmaGrid,
        /// `lo:hi:step`.
        #[arg(long, allow_hyphen_values = true, default_value = "-2:6:0.01")]
        grid: GridSpec,
    },
    /// Run the complex-simulation method comparison.
    Table2,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn resolve_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.dgp.seed = s;
        cfg.table2.seed = s;
    }
    if let Some(r) = g.replications {
        cfg.dgp.replications = r;
        cfg.table2.replications = r;
    }
    if let Some(o) = &g.out {
        cfg.output.directory = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one parsed invocation and returns the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        // Fails only when the pool already exists, e.g. in-process reuse.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global();
    }
    let cfg = resolve_config(&cli.global)?;
    let out = cfg.output.directory.clone();
    commands::ensure_dir(&out)?;
    match &cli.command {
        Command::Simulate { with_oracle } => commands::simulate(&cfg, &out, *with_oracle),
        Command::Fit { data } => commands::fit(&cfg, data, &out),
        Command::Evaluate { model, baseline } => {
            let target = match (model, baseline) {
                (Some(p), _) => EvalTarget::Model(p),
                (None, Some(b)) => EvalTarget::Baseline(match b {
                    BaselineArg::Oracle => Baseline::Oracle,
                    BaselineArg::Mail => Baseline::Mail,
                    BaselineArg::NoMail => Baseline::NoMail,
                    BaselineArg::Ols => Baseline::Ols,
                }),
                (None, None) => return Err(Error::Config("give --model or --baseline".into())),
            };
            commands::evaluate(&cfg, target, &out)
        }
        Command::Cv {
            data,
            grid,
            folds,
            oracle,
        } => {
            let grid = grid.as_ref().unwrap_or(&cfg.model.grid);
            let folds = folds.unwrap_or(cfg.model.folds);
            commands::cv(&cfg, data, grid, folds, *oracle, &out)
        }
        Command::Curve {
            tau0,
            cost,
            family,
            sigmas,
            grid,
        } => commands::curve(*tau0, *cost, *family, sigmas, grid, &out),
        Command::Table2 => commands::table2(&cfg.table2, &out),
    }
}
