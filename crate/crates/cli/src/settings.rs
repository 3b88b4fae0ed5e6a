//! Flat run configuration: a single key–value namespace shared by the
//! config file, the command-line flags, and the config echo embedded in
//! every output.
//!
//! Precedence is flags > file > defaults. The file is flat TOML with
//! exactly these keys; unknown keys are rejected by name. Keys that a
//! given subcommand does not use are permitted (so one config file can
//! drive a whole experiment), but every key a subcommand does use is
//! resolved to its effective value before work starts and echoed back in
//! the output, which makes the echo re-runnable as-is.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Environment variable consulted for the master seed when neither a
/// flag nor a config-file key supplies one.
pub const SEED_ENV_VAR: &str = "ERGODRIFT_SEED";

/// Output format of the main artifact.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Comma-separated table with a `#`-commented config echo header.
    Csv,
    /// JSON object with the config echo under `config`.
    Json,
    /// Binary column path file (`simulate` only; requires `--output`).
    Bin,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Bin => "bin",
        })
    }
}

/// A configuration problem: a missing or invalid field, named so the
/// caller can fix it. Mapped to the usage exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// The full flat key set. Every field is optional here; defaults are
/// applied by the subcommand pipelines via [`Settings::resolve`]-style
/// helpers so the echoed config always shows effective values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Model spec string, e.g. `ou(1)` or `tanh_drift(1,0.5)+smooth_sigma(0.9,0.3)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Estimation point x₀.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    /// Observation horizon T.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Schedule exponent γ ∈ (0,1).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Pre-estimate exponent γ₀ ∈ (2/3,1).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<f64>,
    /// Smoothness index β ∈ (1,2).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Observation-step override δ (default: the calibrated schedule value).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Truncation-exponent override a₀ (υ = (ln T)^{−a₀}).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    /// Pre-estimate window override ς.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub varsigma: Option<f64>,
    /// Permit γ₀ outside (2/3,1) (still within (0,1)).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allow_gamma0_out_of_range: Option<bool>,
    /// Euler–Maruyama substeps per observation step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    /// Initial state for single-path simulation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    /// Burn-in time discarded before recording starts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    /// Record latent Brownian/martingale increments (diagnostic mode).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_increments: Option<bool>,
    /// Seed for single-path commands (`simulate`, inline `estimate`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Replication count for Monte Carlo commands.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    /// Master seed for Monte Carlo commands (fallback: `ERGODRIFT_SEED`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    /// Horizon grid for `study` (and `diagnose` concentration).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    /// Replications per horizon for `study`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps_grid: Option<Vec<usize>>,
    /// Lower edge of the normalized-risk reporting band.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_lo: Option<f64>,
    /// Upper edge of the normalized-risk reporting band.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_hi: Option<f64>,
    /// Deviation threshold κ* for the concentration diagnostic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_star: Option<f64>,
    /// Collect ξ̂ samples and decomposition diagnostics.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<bool>,
    /// Stored path file for `estimate` (binary or CSV; sniffed by magic).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Left edge of the `oracle` table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_min: Option<f64>,
    /// Right edge of the `oracle` table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    /// Number of rows in the `oracle` table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// Main artifact format.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    /// Main artifact path (default: stdout).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Per-replication CSV dump path (`risk`/`study`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dump_replications: Option<PathBuf>,
    /// Worker threads for Monte Carlo replication.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

/// Field-wise precedence merge.
macro_rules! prefer_flags {
    ($flags:expr, $file:expr; $($field:ident),* $(,)?) => {
        Settings { $($field: $flags.$field.or($file.$field)),* }
    };
}

impl Settings {
    /// Parse a flat TOML config file, naming the offending key on error.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    /// Merge with flags-beat-file precedence (defaults are applied later,
    /// per subcommand).
    pub fn merged(file: Settings, flags: Settings) -> Settings {
        prefer_flags!(flags, file;
            model, x0, t, gamma, gamma0, beta, delta, a0, varsigma,
            allow_gamma0_out_of_range, substeps, y0, burn_in,
            record_increments, seed, replications, master_seed, t_grid,
            reps_grid, band_lo, band_hi, kappa_star, diagnostic, path,
            x_min, x_max, points, format, output, dump_replications, workers,
        )
    }

    /// Resolve the master seed: explicit setting, else the
    /// `ERGODRIFT_SEED` environment variable, else 0. The environment is
    /// only consulted when no explicit value exists, and a present but
    /// unparseable variable is a named config error rather than a silent
    /// default.
    pub fn resolve_master_seed(&self) -> Result<u64, ConfigError> {
        if let Some(seed) = self.master_seed {
            return Ok(seed);
        }
        match std::env::var(SEED_ENV_VAR) {
            Ok(text) => text.trim().parse::<u64>().map_err(|e| {
                ConfigError(format!("{SEED_ENV_VAR}={text:?} is not a valid seed: {e}"))
            }),
            Err(_) => Ok(0),
        }
    }

    /// The echoed view of the configuration: every key that determines
    /// the computed results. Artifact placement (`output`,
    /// `dump_replications`) and the worker count (aggregation is
    /// order-independent by construction) are stripped, so reruns that
    /// only move an artifact or resize the pool stay byte-identical.
    pub fn echo_settings(&self) -> Settings {
        Settings {
            output: None,
            dump_replications: None,
            workers: None,
            ..self.clone()
        }
    }

    /// Serialize the effective configuration as flat TOML — the config
    /// echo. The echo re-parses to an equivalent `Settings`.
    pub fn echo_toml(&self) -> String {
        toml::to_string(&self.echo_settings()).expect("flat settings always serialize")
    }

    /// The echo as `# `-prefixed comment lines for CSV artifacts.
    pub fn echo_comment_block(&self) -> String {
        self.echo_toml()
            .lines()
            .map(|l| format!("# {l}\n"))
            .collect()
    }
}

/// Require a field, naming it on absence.
pub fn require<T>(value: Option<T>, name: &str) -> Result<T, ConfigError> {
    value.ok_or_else(|| ConfigError(format!("missing required setting `{name}`")))
}
