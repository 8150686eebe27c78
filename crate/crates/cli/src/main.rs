//! `robust-growth`: analytic reports, check batteries, slice tables and
//! Monte-Carlo growth experiments.
//!
//! Exit codes: 0 success, 1 a check failed, 2 configuration error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ExampleChoice, Measure, RunConfig, OUT_ENV};

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 2.
    Config(String),
    /// A computation failed: exit code 1.
    Failure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Failure(m) => write!(f, "{m}"),
        }
    }
}

impl From<robust_growth::Error> for CliError {
    fn from(e: robust_growth::Error) -> Self {
        use robust_growth::Error as E;
        match e {
            E::InvalidParameter { .. }
            | E::Feller { .. }
            | E::NotPositiveDefinite { .. }
            | E::DimensionMismatch(_)
            | E::UnsupportedDimension { .. }
            | E::UnstableDynamics { .. }
            | E::Unsupported(_)
            | E::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "robust-growth", version, about = "Robust growth-optimal strategies under drift uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; a manifest from an earlier run reproduces that run.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = OUT_ENV, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override any configuration key, e.g. `--set sim.dt=0.002`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SimArgs {
    /// Horizon in years.
    #[arg(long = "horizon")]
    t: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    n_paths: Option<usize>,
    /// Recording horizons, comma separated.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<f64>>,
}

#[derive(Args)]
struct ExampleArgs {
    #[arg(long, value_enum)]
    example: Option<ExampleChoice>,
    /// Parameter of the selected example, e.g. `--param sigma=0.7`.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    param: Vec<String>,
    /// Gaussian model file for `--example custom`.
    #[arg(long, value_name = "FILE")]
    model: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form CTOU report and the growth experiment under P* and P^.
    CtouReport {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
        /// Analytic report only.
        #[arg(long)]
        no_sim: bool,
        #[arg(long, allow_negative_numbers = true)]
        c_x: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        c_y: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        kappa_x: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        kappa_y: Option<f64>,
    },
    /// Property checks over random Gaussian models.
    GaussianSuite {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Slices of the robust strategy at the default factor levels.
    Slices {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        example: ExampleArgs,
    },
    /// Monte-Carlo growth rates of strategies under a worst-case measure.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        example: ExampleArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, value_enum)]
        measure: Option<Measure>,
        /// Comma separated: theta_star, theta_hat, theta_hat_literal (ctou), zero.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
    /// Invariant battery for one example.
    Check {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        example: ExampleArgs,
        /// Constant added to b_Y (breaks compatibility when nonzero).
        #[arg(long, allow_negative_numbers = true)]
        b_y_shift: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::CtouReport { .. } => "ctou-report",
            Command::GaussianSuite { .. } => "gaussian-suite",
            Command::Slices { .. } => "slices",
            Command::Simulate { .. } => "simulate",
            Command::Check { .. } => "check",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::CtouReport { common, .. }
            | Command::GaussianSuite { common, .. }
            | Command::Slices { common, .. }
            | Command::Simulate { common, .. }
            | Command::Check { common, .. } => common,
        }
    }
}

fn apply_sim(cfg: &mut RunConfig, sim: &SimArgs) {
    if let Some(t) = sim.t {
        cfg.sim.t = t;
    }
    if let Some(dt) = sim.dt {
        cfg.sim.dt = dt;
    }
    if let Some(n) = sim.n_paths {
        cfg.sim.n_paths = n;
    }
    if let Some(c) = &sim.checkpoints {
        cfg.sim.checkpoints = c.clone();
    }
}

/// Resolves the configuration: defaults, file, `--set`, `--param`, then flags.
fn resolve(cmd: &Command) -> Result<RunConfig, CliError> {
    let common = cmd.common();
    let example_args = match cmd {
        Command::Slices { example, .. } | Command::Simulate { example, .. } | Command::Check { example, .. } => Some(example),
        _ => None,
    };
    let mut sets = common.set.clone();
    if let Some(ex) = example_args {
        if !ex.param.is_empty() {
            // The section follows the example chosen by file and flags.
            let base = config::load(common.config.as_deref(), cmd.name(), &sets)?;
            let section = ex.example.unwrap_or(base.example);
            if section == ExampleChoice::Custom {
                return Err(CliError::Config("--param does not apply to the custom example; edit the model file".into()));
            }
            sets.extend(ex.param.iter().map(|p| format!("{}.{p}", section.name())));
        }
    }
    let mut cfg = config::load(common.config.as_deref(), cmd.name(), &sets)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(ex) = example_args {
        if let Some(e) = ex.example {
            cfg.example = e;
        }
        if ex.model.is_some() {
            cfg.model = ex.model.clone();
        }
    }
    match cmd {
        Command::CtouReport { sim, no_sim, c_x, c_y, kappa_x, kappa_y, .. } => {
            apply_sim(&mut cfg, sim);
            if *no_sim {
                cfg.report.simulate = false;
            }
            for (slot, v) in [(&mut cfg.ctou.c_x, c_x), (&mut cfg.ctou.c_y, c_y), (&mut cfg.ctou.kappa_x, kappa_x), (&mut cfg.ctou.kappa_y, kappa_y)] {
                if let Some(v) = v {
                    *slot = *v;
                }
            }
        }
        Command::GaussianSuite { count, .. } => {
            if let Some(c) = count {
                cfg.suite.count = *c;
            }
        }
        Command::Simulate { sim, measure, strategies, .. } => {
            apply_sim(&mut cfg, sim);
            if let Some(m) = measure {
                cfg.simulate.measure = *m;
            }
            if let Some(s) = strategies {
                cfg.simulate.strategies = s.iter().map(|x| x.trim().to_string()).collect();
            }
        }
        Command::Check { b_y_shift, .. } => {
            if let Some(b) = b_y_shift {
                cfg.check.b_y_shift = *b;
            }
        }
        Command::Slices { .. } => {}
    }
    Ok(cfg)
}

fn run(cmd: &Command) -> Result<Vec<String>, CliError> {
    let cfg = resolve(cmd)?;
    let result = match cmd {
        Command::CtouReport { .. } => commands::ctou_report(&cfg),
        Command::GaussianSuite { .. } => commands::gaussian_suite(&cfg),
        Command::Slices { .. } => commands::slices(&cfg),
        Command::Simulate { .. } => commands::simulate(&cfg),
        Command::Check { .. } => commands::check(&cfg),
    }?;
    let manifest = output::write(&cmd.common().out, &cfg, &result.artifacts)?;
    let mut lines = result.lines;
    lines.push(format!("wrote {} artifact(s) and {}", result.artifacts.len(), manifest.display()));
    if result.failed.is_empty() {
        Ok(lines)
    } else {
        for l in &lines {
            println!("{l}");
        }
        Err(CliError::Failure(format!("failed checks: {}", result.failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
