//! `ergodrift` — sequential drift estimation for scalar ergodic
//! diffusions: path simulation, the truncated sequential estimator,
//! Monte Carlo risk studies, invariant-density tables, and
//! distributional diagnostics.
//!
//! Configuration is one flat key set, fed from three layers with
//! precedence flags > config file (`--config`, flat TOML) > defaults.
//! Every subcommand accepts every flag so a single config file can drive
//! a whole experiment; `ERGODRIFT_SEED` supplies the master seed when no
//! flag or file key does. Result bodies are deterministic in the
//! configuration and seeds; timestamps live in a `.meta.json` sidecar,
//! and all file writes are atomic (temp file + rename).
//!
//! Exit codes: 0 success, 2 configuration/usage error, 1 runtime
//! failure. Failures print a machine-readable JSON error record to
//! stderr.

mod output;
mod pipelines;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::pipelines::{Artifacts, Body};
use crate::settings::{ConfigError, Format, Settings};

#[derive(Parser)]
#[command(
    name = "ergodrift",
    version,
    about = "Sequential drift estimation for ergodic diffusions",
    long_about = "Simulate scalar ergodic diffusions, run the truncated sequential \
                  drift estimator, and evaluate its risk against the nonasymptotic \
                  bound and the efficiency constant."
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one seeded path (CSV `t,y` or binary column file).
    Simulate(Flags),
    /// Run the sequential estimator on a stored or inline path (JSON).
    Estimate(Flags),
    /// Monte Carlo pointwise risk at one horizon (CSV row or JSON).
    Risk(Flags),
    /// Efficiency study over a horizon grid with a trend verdict.
    Study(Flags),
    /// Invariant-density table q(x) (CSV `x,q` or JSON).
    Oracle(Flags),
    /// KS test of the noise term and occupation-concentration check (JSON).
    Diagnose(Flags),
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Simulate(_) => "simulate",
            Cmd::Estimate(_) => "estimate",
            Cmd::Risk(_) => "risk",
            Cmd::Study(_) => "study",
            Cmd::Oracle(_) => "oracle",
            Cmd::Diagnose(_) => "diagnose",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Cmd::Simulate(f)
            | Cmd::Estimate(f)
            | Cmd::Risk(f)
            | Cmd::Study(f)
            | Cmd::Oracle(f)
            | Cmd::Diagnose(f) => f,
        }
    }

    fn pipeline(&self) -> fn(Settings) -> Result<Artifacts> {
        match self {
            Cmd::Simulate(_) => pipelines::simulate,
            Cmd::Estimate(_) => pipelines::estimate,
            Cmd::Risk(_) => pipelines::risk,
            Cmd::Study(_) => pipelines::study,
            Cmd::Oracle(_) => pipelines::oracle,
            Cmd::Diagnose(_) => pipelines::diagnose,
        }
    }
}

/// The full flat flag set (mirrors the config-file keys one-to-one).
#[derive(Args, Clone, Debug, Default)]
struct Flags {
    /// Flat TOML config file; these flags override its keys.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Model spec, e.g. "ou(1)" or "tanh_drift(1,0.5)+smooth_sigma(0.9,0.3)".
    #[arg(long)]
    model: Option<String>,
    /// Estimation point x0.
    #[arg(long, allow_negative_numbers = true)]
    x0: Option<f64>,
    /// Observation horizon T (estimate with --path infers it from the file).
    #[arg(long)]
    t: Option<f64>,
    /// Schedule exponent gamma in (0,1).
    #[arg(long)]
    gamma: Option<f64>,
    /// Pre-estimate exponent gamma0 in (2/3,1).
    #[arg(long)]
    gamma0: Option<f64>,
    /// Smoothness index beta in (1,2).
    #[arg(long)]
    beta: Option<f64>,
    /// Observation step delta (simulate: required; else schedule override).
    #[arg(long)]
    delta: Option<f64>,
    /// Truncation exponent override a0 (upsilon = (ln T)^-a0).
    #[arg(long)]
    a0: Option<f64>,
    /// Pre-estimate window override varsigma.
    #[arg(long)]
    varsigma: Option<f64>,
    /// Permit gamma0 outside (2/3,1) (still inside (0,1)).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    allow_gamma0_out_of_range: Option<bool>,
    /// Euler-Maruyama substeps per observation step.
    #[arg(long)]
    substeps: Option<usize>,
    /// Initial state for single-path commands.
    #[arg(long, allow_negative_numbers = true)]
    y0: Option<f64>,
    /// Burn-in time discarded before recording.
    #[arg(long)]
    burn_in: Option<f64>,
    /// Record latent Brownian/martingale increments.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    record_increments: Option<bool>,
    /// Seed for single-path commands.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo replication count.
    #[arg(long)]
    replications: Option<usize>,
    /// Master seed for Monte Carlo commands (env fallback: ERGODRIFT_SEED).
    #[arg(long)]
    master_seed: Option<u64>,
    /// Horizon grid, comma-separated (study/diagnose).
    #[arg(long, value_delimiter = ',')]
    t_grid: Option<Vec<f64>>,
    /// Replications per horizon, comma-separated (study).
    #[arg(long, value_delimiter = ',')]
    reps_grid: Option<Vec<usize>>,
    /// Lower edge of the normalized-risk band.
    #[arg(long, allow_negative_numbers = true)]
    band_lo: Option<f64>,
    /// Upper edge of the normalized-risk band.
    #[arg(long, allow_negative_numbers = true)]
    band_hi: Option<f64>,
    /// Deviation threshold kappa* for the concentration diagnostic.
    #[arg(long)]
    kappa_star: Option<f64>,
    /// Collect xi samples and decomposition diagnostics.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    diagnostic: Option<bool>,
    /// Stored path file for estimate (binary or CSV, sniffed).
    #[arg(long)]
    path: Option<PathBuf>,
    /// Left edge of the oracle table.
    #[arg(long, allow_negative_numbers = true)]
    x_min: Option<f64>,
    /// Right edge of the oracle table.
    #[arg(long, allow_negative_numbers = true)]
    x_max: Option<f64>,
    /// Rows in the oracle table.
    #[arg(long)]
    points: Option<usize>,
    /// Output format (csv, json; bin for simulate).
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write the main artifact here instead of stdout (atomic; adds a
    /// .meta.json sidecar with the timestamp).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-replication CSV dump (risk/study).
    #[arg(long, value_name = "FILE")]
    dump_replications: Option<PathBuf>,
    /// Worker threads for Monte Carlo replication (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl Flags {
    fn into_settings(self) -> Settings {
        Settings {
            model: self.model,
            x0: self.x0,
            t: self.t,
            gamma: self.gamma,
            gamma0: self.gamma0,
            beta: self.beta,
            delta: self.delta,
            a0: self.a0,
            varsigma: self.varsigma,
            allow_gamma0_out_of_range: self.allow_gamma0_out_of_range,
            substeps: self.substeps,
            y0: self.y0,
            burn_in: self.burn_in,
            record_increments: self.record_increments,
            seed: self.seed,
            replications: self.replications,
            master_seed: self.master_seed,
            t_grid: self.t_grid,
            reps_grid: self.reps_grid,
            band_lo: self.band_lo,
            band_hi: self.band_hi,
            kappa_star: self.kappa_star,
            diagnostic: self.diagnostic,
            path: self.path,
            x_min: self.x_min,
            x_max: self.x_max,
            points: self.points,
            format: self.format,
            output: self.output,
            dump_replications: self.dump_replications,
            workers: self.workers,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = cli.command.name();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            let record = serde_json::json!({
                "error": {
                    "kind": kind,
                    "exit_code": code,
                    "command": command,
                    "message": format!("{err:#}"),
                }
            });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}

fn run(command: &Cmd) -> Result<()> {
    let flags = command.flags().clone();
    let file_settings = match &flags.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    let settings = Settings::merged(file_settings, flags.into_settings());

    if let Some(workers) = settings.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("initializing the worker pool")?;
    }

    let artifacts = command.pipeline()(settings)?;
    match &artifacts.body {
        Body::Text(body) => {
            output::emit_text(artifacts.output.as_deref(), body, command.name())?;
        }
        Body::Bytes(bytes) => {
            let path = artifacts
                .output
                .as_deref()
                .expect("binary bodies are rejected without an output path");
            output::write_atomic(path, bytes)?;
            output::write_sidecar(path, command.name())?;
        }
    }
    if let Some((path, dump)) = &artifacts.dump {
        output::write_atomic(path, dump.as_bytes())?;
    }
    Ok(())
}

/// Map an error chain to (exit code, record kind): configuration
/// problems exit 2, runtime failures exit 1.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return (2, "config");
        }
        if let Some(core) = cause.downcast_ref::<ergodrift::Error>() {
            return match core {
                ergodrift::Error::InvalidArgument(_) | ergodrift::Error::Unsupported(_) => {
                    (2, "config")
                }
                _ => (1, "runtime"),
            };
        }
    }
    (1, "runtime")
}
