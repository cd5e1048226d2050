//! Command-line front end: capacity and bound evaluation, seeded
//! simulation, parameter sweeps, and the self-check suites.
//!
//! Formula commands (`capacity`, `bounds`) print JSON or CSV to stdout.
//! `simulate` loads a JSON experiment config, optionally overrides a few
//! fields from flags, writes `trials.csv` and `summary.json` when an
//! output directory is set, and prints the summary JSON to stdout.
//! `sweep` prints one CSV row per grid point. `verify` prints a JSON
//! report and exits nonzero when any check fails.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gdrc::bounds::bound_report;
use gdrc::capacity::eps_capacity;
use gdrc::harness::{
    run_experiment, sweep, sweep_csv, verify_suite, ExperimentConfig, SweepAxis, VerifySuite,
};
use gdrc::ChannelParams;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "gdrc",
    about = "Finite-blocklength rates and decode-forward simulation for the Gaussian degraded relay channel",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ChannelArgs {
    /// Source power constraint P1
    #[arg(long)]
    p1: f64,
    /// Relay power constraint P2
    #[arg(long)]
    p2: f64,
    /// Source-to-relay noise variance N2
    #[arg(long)]
    n2: f64,
    /// Relay-to-destination extra noise variance N3
    #[arg(long)]
    n3: f64,
}

impl ChannelArgs {
    fn parse(&self) -> Result<ChannelParams> {
        Ok(ChannelParams::new(self.p1, self.p2, self.n2, self.n3)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Epsilon-capacity of the channel (rate in nats per symbol)
    Capacity {
        #[command(flatten)]
        ch: ChannelArgs,
        /// Target average error probability
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
    },
    /// Finite-blocklength bound table over a blocklength grid (CSV)
    Bounds {
        #[command(flatten)]
        ch: ChannelArgs,
        /// Target average error probability
        #[arg(long)]
        eps: f64,
        /// Comma-separated blocklengths, e.g. 1000000,100000000
        #[arg(long = "n-grid", value_delimiter = ',')]
        n_grid: Vec<u64>,
    },
    /// Run a seeded Monte Carlo experiment from a JSON config
    Simulate {
        /// Path to the experiment config (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Override the trial count
        #[arg(long)]
        trials: Option<u64>,
        /// Override the master seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the worker count
        #[arg(long)]
        workers: Option<usize>,
        /// Override the output directory for trials.csv and summary.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one parameter axis of a base config (CSV to stdout)
    Sweep {
        /// Axis to sweep: n, eps, p1 or p2
        #[arg(long)]
        axis: String,
        /// Comma-separated, strictly increasing grid values
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        /// Path to the base experiment config (JSON)
        #[arg(long)]
        config: PathBuf,
    },
    /// Run self-check suites and report as JSON (nonzero exit on failure)
    Verify {
        /// Suite: packing, bht, mgf, inequality or all
        #[arg(long)]
        suite: String,
        /// Seed for the suite randomness
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    Ok(cfg)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Capacity { ch, eps } => {
            let result = eps_capacity(eps, &ch.parse()?)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Bounds { ch, eps, n_grid } => {
            if n_grid.is_empty() {
                bail!("--n-grid needs at least one blocklength");
            }
            let ch = ch.parse()?;
            println!(
                "n,l,m_total,feasible,log_b,log_m,kappa1,kappa2,kappa3,achievable_log_m,\
converse_log_m,converse_cond1,converse_cond2,theta_lower,theta_upper"
            );
            for &n in &n_grid {
                let r = bound_report(n, eps, &ch)?;
                let ach = r
                    .achievable_log_m
                    .map(|a| a.to_string())
                    .unwrap_or_default();
                println!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.n,
                    r.l,
                    r.m_total,
                    r.feasible,
                    r.log_b,
                    r.log_m,
                    r.kappa1,
                    r.kappa2,
                    r.kappa3,
                    ach,
                    r.converse_log_m,
                    r.converse_conditions[0],
                    r.converse_conditions[1],
                    r.theta_lower,
                    r.theta_upper,
                );
            }
        }
        Command::Simulate {
            config,
            trials,
            seed,
            workers,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(o) = out {
                cfg.output_path = Some(o);
            }
            let (_, summary) = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Sweep { axis, grid, config } => {
            let axis: SweepAxis = axis.parse()?;
            let cfg = load_config(&config)?;
            let rows = sweep(axis, &grid, &cfg)?;
            print!("{}", sweep_csv(&rows));
        }
        Command::Verify { suite, seed } => {
            let suite: VerifySuite = suite.parse()?;
            let report = verify_suite(suite, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
