//! Subcommand pipelines: each takes the merged settings, applies the
//! documented defaults, runs the requested computation, and returns the
//! artifact bodies as strings/bytes. File placement, stdout, and sidecar
//! metadata are the caller's job, which keeps every pipeline a pure
//! function of (settings, seeds) — the determinism contract the outputs
//! advertise.
//!
//! Shared conventions:
//! - CSV artifacts start with the config echo as `# `-commented flat TOML
//!   (strip the prefix and the block re-parses), then the header row,
//!   then data rows with floats at 17 significant digits.
//! - JSON artifacts carry the same echo under `"config"`.
//! - `estimate` and `diagnose` emit JSON only; `simulate` persists paths
//!   as CSV or the binary column format.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use ergodrift::estimator::{
    decompose_error, estimate_drift, estimate_drift_streaming, make_schedule,
    EstimatorSchedule, ScheduleOverrides,
};
use ergodrift::model::ModelTheta;
use ergodrift::oracle::{DensityConfig, InvariantDensity};
use ergodrift::risk::{
    concentration_exceedance, efficiency_study, ks_test_standard_normal,
    pointwise_risk_mc, RiskReport, StudyParams,
};
use ergodrift::sde::{replication_stream, simulate_path, PathSample, SdeStream, SimulationConfig};
use ergodrift::Error as CoreError;

use crate::output::fmt_float;
use crate::settings::{require, ConfigError, Format, Settings};

// Defaults applied when neither flags nor the config file set a key.
const DEFAULT_MODEL: &str = "ou(1)";
const DEFAULT_GAMMA: f64 = 0.5;
const DEFAULT_GAMMA0: f64 = 0.75;
const DEFAULT_BETA: f64 = 1.5;
const DEFAULT_X0: f64 = 0.0;
const DEFAULT_SUBSTEPS: usize = 16;
const DEFAULT_REPLICATIONS: usize = 100;
const DEFAULT_DIAGNOSE_REPLICATIONS: usize = 200;
const DEFAULT_T_GRID: [f64; 3] = [200.0, 500.0, 1000.0];
const DEFAULT_REPS_GRID: [usize; 3] = [500, 300, 100];
const DEFAULT_BAND: (f64, f64) = (0.6, 1.4);
const DEFAULT_KAPPA_STAR: f64 = 0.2;
const DEFAULT_ORACLE_RANGE: (f64, f64) = (-4.0, 4.0);
const DEFAULT_ORACLE_POINTS: usize = 801;

/// Main artifact payload.
#[derive(Debug)]
pub enum Body {
    /// Deterministic text (CSV or JSON, newline-terminated).
    Text(String),
    /// Binary column path file.
    Bytes(Vec<u8>),
}

/// Everything a pipeline produces; the caller writes it out.
#[derive(Debug)]
pub struct Artifacts {
    /// The main artifact.
    pub body: Body,
    /// Optional per-replication CSV dump (path, body).
    pub dump: Option<(PathBuf, String)>,
    /// Destination of the main artifact (`None` = stdout).
    pub output: Option<PathBuf>,
}

impl Artifacts {
    fn text(body: String, eff: &Settings) -> Self {
        Artifacts { body: Body::Text(body), dump: None, output: eff.output.clone() }
    }
}

// ------------------------------------------------------------ shared helpers

fn model_from(eff: &mut Settings) -> Result<ModelTheta> {
    let spec = eff.model.get_or_insert_with(|| DEFAULT_MODEL.into()).clone();
    Ok(ModelTheta::parse(&spec)?)
}

fn overrides_from(eff: &Settings) -> ScheduleOverrides {
    ScheduleOverrides {
        delta: eff.delta,
        a0: eff.a0,
        varsigma: eff.varsigma,
        allow_gamma0_out_of_range: eff.allow_gamma0_out_of_range.unwrap_or(false),
    }
}

fn schedule_from(eff: &mut Settings) -> Result<EstimatorSchedule> {
    let t = require(eff.t, "t")?;
    let gamma = *eff.gamma.get_or_insert(DEFAULT_GAMMA);
    let gamma0 = *eff.gamma0.get_or_insert(DEFAULT_GAMMA0);
    let beta = *eff.beta.get_or_insert(DEFAULT_BETA);
    let x0 = *eff.x0.get_or_insert(DEFAULT_X0);
    Ok(make_schedule(t, gamma, gamma0, beta, x0, overrides_from(eff))?)
}

fn study_params_from(eff: &mut Settings) -> StudyParams {
    StudyParams {
        gamma: *eff.gamma.get_or_insert(DEFAULT_GAMMA),
        gamma0: *eff.gamma0.get_or_insert(DEFAULT_GAMMA0),
        beta: *eff.beta.get_or_insert(DEFAULT_BETA),
        x0: *eff.x0.get_or_insert(DEFAULT_X0),
        overrides: overrides_from(eff),
        band: (
            *eff.band_lo.get_or_insert(DEFAULT_BAND.0),
            *eff.band_hi.get_or_insert(DEFAULT_BAND.1),
        ),
    }
}

/// Resolve the format for tabular commands (`bin` is simulate-only).
fn table_format(eff: &mut Settings, cmd: &str) -> Result<Format> {
    match *eff.format.get_or_insert(Format::Csv) {
        Format::Bin => Err(ConfigError(format!(
            "`format = bin` is only valid for simulate, not {cmd}"
        ))
        .into()),
        f => Ok(f),
    }
}

/// Enforce JSON-only emission for `estimate` and `diagnose`.
fn json_only(eff: &mut Settings, cmd: &str) -> Result<()> {
    match *eff.format.get_or_insert(Format::Json) {
        Format::Json => Ok(()),
        other => Err(ConfigError(format!(
            "`{cmd}` emits a JSON record; `format = {other}` is not valid"
        ))
        .into()),
    }
}

fn resolve_master_seed(eff: &mut Settings) -> Result<u64> {
    let seed = eff.resolve_master_seed()?;
    eff.master_seed = Some(seed);
    Ok(seed)
}

fn json_body(doc: &serde_json::Value) -> Result<String> {
    Ok(format!("{}\n", serde_json::to_string_pretty(doc)?))
}

/// Rows of the risk/study table, one per horizon.
fn report_csv(r: &RiskReport) -> String {
    let mut s = String::from("T,reps,risk,risk_stderr,normalized_risk,gamma_fail_rate,U_star\n");
    for i in 0..r.t_grid.len() {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_float(r.t_grid[i]),
            r.replications[i],
            fmt_float(r.empirical_risk[i]),
            fmt_float(r.mc_stderr[i]),
            fmt_float(r.normalized_risk[i]),
            fmt_float(r.gamma_fail_rate[i]),
            fmt_float(r.u_star[i]),
        ));
    }
    s
}

/// Per-replication dump for external plotting; optional fields are left
/// empty when absent.
fn replication_dump_csv(r: &RiskReport) -> String {
    let mut s = String::from(
        "T,replication,estimate,abs_error,gamma_event,q_hat,threshold,stop_index,xi_stat\n",
    );
    for (ti, records) in r.replication_records.iter().enumerate() {
        for rec in records {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                fmt_float(r.t_grid[ti]),
                rec.index,
                fmt_float(rec.estimate),
                fmt_float(rec.abs_error),
                rec.gamma_event,
                fmt_float(rec.q_hat),
                fmt_float(rec.threshold),
                rec.stop_index,
                rec.xi_stat.map(fmt_float).unwrap_or_default(),
            ));
        }
    }
    s
}

/// Read a stored path file, sniffing the binary magic and falling back
/// to CSV.
fn read_path_file(file: &Path) -> Result<PathSample> {
    match PathSample::read_binary(file) {
        Ok(path) => Ok(path),
        Err(CoreError::MalformedFile { .. }) => PathSample::read_csv(file)
            .with_context(|| format!("{} is neither a binary nor a CSV path file", file.display())),
        Err(other) => Err(other.into()),
    }
}

// --------------------------------------------------------------- subcommands

/// `simulate`: one seeded path, persisted as CSV (`t,y` with config-echo
/// comments) or the binary column format.
pub fn simulate(mut eff: Settings) -> Result<Artifacts> {
    let model = model_from(&mut eff)?;
    let t = require(eff.t, "t")?;
    let delta = require(eff.delta, "delta")?;
    let substeps = *eff.substeps.get_or_insert(DEFAULT_SUBSTEPS);
    let y0 = *eff.y0.get_or_insert(0.0);
    let burn_in = *eff.burn_in.get_or_insert(0.0);
    let record = *eff.record_increments.get_or_insert(false);
    let seed = *eff.seed.get_or_insert(0);
    let format = *eff.format.get_or_insert(Format::Csv);

    let cfg = SimulationConfig::new(t, delta)
        .with_substeps(substeps)
        .with_y0(y0)
        .with_burn_in(burn_in)
        .with_record(record);
    let path = simulate_path(&model, &cfg, seed)?;

    match format {
        Format::Csv => {
            let mut body = eff.echo_comment_block();
            body.push_str("t,y\n");
            for (j, v) in path.values.iter().enumerate() {
                body.push_str(&format!("{},{}\n", fmt_float(path.time(j)), fmt_float(*v)));
            }
            Ok(Artifacts::text(body, &eff))
        }
        Format::Bin => {
            let output = eff.output.clone().ok_or_else(|| {
                ConfigError("`format = bin` requires `output` (binary does not go to stdout)".into())
            })?;
            let tmp = tempfile::NamedTempFile::new().context("staging binary path file")?;
            path.write_binary(tmp.path())?;
            let bytes = std::fs::read(tmp.path()).context("staging binary path file")?;
            Ok(Artifacts { body: Body::Bytes(bytes), dump: None, output: Some(output) })
        }
        Format::Json => Err(ConfigError(
            "paths persist as `csv` or `bin`; `format = json` is not valid for simulate".into(),
        )
        .into()),
    }
}

/// `estimate`: run the sequential estimator on a stored path file or an
/// inline-simulated stream, emitting one JSON record with the outcome,
/// the schedule, and provenance.
pub fn estimate(mut eff: Settings) -> Result<Artifacts> {
    json_only(&mut eff, "estimate")?;
    let model = model_from(&mut eff)?;
    let diagnostic = *eff.diagnostic.get_or_insert(false);

    let (sched, outcome, seed, source, generator_id) = match eff.path.clone() {
        Some(file) => {
            let path = read_path_file(&file)?;
            // A stored file already records its step and length; explicit
            // `t`/`delta` still override but must then match the file.
            eff.t.get_or_insert(path.n_steps() as f64 * path.delta);
            eff.delta.get_or_insert(path.delta);
            let sched = schedule_from(&mut eff)?;
            let mut outcome = estimate_drift(&path, &sched, None)?;
            if diagnostic {
                outcome.diagnostics = Some(decompose_error(&path, &sched, &outcome, &model)?);
            }
            (sched, outcome, path.seed, file.display().to_string(), path.generator_id.clone())
        }
        None => {
            let sched = schedule_from(&mut eff)?;
            let seed = *eff.seed.get_or_insert(0);
            let y0 = *eff.y0.get_or_insert(0.0);
            let substeps = *eff.substeps.get_or_insert(DEFAULT_SUBSTEPS);
            let burn_in = *eff.burn_in.get_or_insert(0.0);
            let mut stream =
                SdeStream::new(&model, sched.delta, substeps, y0, replication_stream(seed, 0))?;
            let generator_id = stream.integrator_id();
            if burn_in > 0.0 {
                stream.skip((burn_in / sched.delta).round() as usize);
            }
            let outcome = estimate_drift_streaming(&model, &sched, stream, diagnostic)?;
            (sched, outcome, seed, "inline".to_string(), generator_id)
        }
    };

    let doc = serde_json::json!({
        "config": eff.echo_settings(),
        "schedule": sched,
        "outcome": outcome,
        "provenance": {
            "seed": seed,
            "source": source,
            "generator_id": generator_id,
        },
    });
    Ok(Artifacts::text(json_body(&doc)?, &eff))
}

/// `risk`: Monte Carlo pointwise risk at a single horizon.
pub fn risk(mut eff: Settings) -> Result<Artifacts> {
    let format = table_format(&mut eff, "risk")?;
    let model = model_from(&mut eff)?;
    let sched = schedule_from(&mut eff)?;
    let replications = *eff.replications.get_or_insert(DEFAULT_REPLICATIONS);
    let master_seed = resolve_master_seed(&mut eff)?;
    let diagnostic = *eff.diagnostic.get_or_insert(false);

    let report = pointwise_risk_mc(&model, &sched, replications, master_seed, diagnostic)?;
    let dump =
        eff.dump_replications.clone().map(|p| (p, replication_dump_csv(&report)));
    let body = match format {
        Format::Csv => format!("{}{}", eff.echo_comment_block(), report_csv(&report)),
        Format::Json => json_body(&serde_json::json!({ "config": eff.echo_settings(), "report": report }))?,
        Format::Bin => unreachable!("rejected by table_format"),
    };
    Ok(Artifacts { body: Body::Text(body), dump, output: eff.output.clone() })
}

/// `study`: the efficiency study over a horizon grid, with the trend
/// verdict in the JSON form.
pub fn study(mut eff: Settings) -> Result<Artifacts> {
    let format = table_format(&mut eff, "study")?;
    let model = model_from(&mut eff)?;
    let params = study_params_from(&mut eff);
    let t_grid = eff.t_grid.get_or_insert_with(|| DEFAULT_T_GRID.to_vec()).clone();
    let reps_grid = eff.reps_grid.get_or_insert_with(|| DEFAULT_REPS_GRID.to_vec()).clone();
    let master_seed = resolve_master_seed(&mut eff)?;
    let diagnostic = *eff.diagnostic.get_or_insert(false);

    let outcome =
        efficiency_study(&model, &t_grid, &reps_grid, &params, master_seed, diagnostic)?;
    let dump = eff
        .dump_replications
        .clone()
        .map(|p| (p, replication_dump_csv(&outcome.report)));
    let body = match format {
        Format::Csv => format!("{}{}", eff.echo_comment_block(), report_csv(&outcome.report)),
        Format::Json => json_body(&serde_json::json!({
            "config": eff.echo_settings(),
            "report": outcome.report,
            "trend": outcome.trend,
        }))?,
        Format::Bin => unreachable!("rejected by table_format"),
    };
    Ok(Artifacts { body: Body::Text(body), dump, output: eff.output.clone() })
}

/// `oracle`: an invariant-density table q(x) on a uniform grid.
pub fn oracle(mut eff: Settings) -> Result<Artifacts> {
    let format = table_format(&mut eff, "oracle")?;
    let model = model_from(&mut eff)?;
    let x_min = *eff.x_min.get_or_insert(DEFAULT_ORACLE_RANGE.0);
    let x_max = *eff.x_max.get_or_insert(DEFAULT_ORACLE_RANGE.1);
    let points = *eff.points.get_or_insert(DEFAULT_ORACLE_POINTS);
    if !(x_max > x_min) {
        return Err(ConfigError(format!("need `x_min` < `x_max`, got [{x_min}, {x_max}]")).into());
    }
    if points < 2 {
        return Err(ConfigError(format!("`points` must be at least 2, got {points}")).into());
    }

    let density = InvariantDensity::build(&model, &DensityConfig::default())?;
    let step = (x_max - x_min) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| x_min + i as f64 * step).collect();
    let qs: Vec<f64> = xs.iter().map(|&x| density.density(x)).collect();

    let body = match format {
        Format::Csv => {
            let mut body = eff.echo_comment_block();
            body.push_str("x,q\n");
            for (x, q) in xs.iter().zip(&qs) {
                body.push_str(&format!("{},{}\n", fmt_float(*x), fmt_float(*q)));
            }
            body
        }
        Format::Json => json_body(&serde_json::json!({ "config": eff.echo_settings(), "x": xs, "q": qs }))?,
        Format::Bin => unreachable!("rejected by table_format"),
    };
    Ok(Artifacts::text(body, &eff))
}

/// `diagnose`: distributional diagnostics at one horizon — the KS test
/// of the normalized noise term ξ̂ against N(0,1) on the Γ replications,
/// plus the occupation-deviation exceedance over `t_grid`.
pub fn diagnose(mut eff: Settings) -> Result<Artifacts> {
    json_only(&mut eff, "diagnose")?;
    let model = model_from(&mut eff)?;
    let sched = schedule_from(&mut eff)?;
    let replications = *eff.replications.get_or_insert(DEFAULT_DIAGNOSE_REPLICATIONS);
    let master_seed = resolve_master_seed(&mut eff)?;
    eff.diagnostic = Some(true);
    let kappa_star = *eff.kappa_star.get_or_insert(DEFAULT_KAPPA_STAR);
    let t_grid = eff.t_grid.get_or_insert_with(|| vec![sched.t_horizon]).clone();
    let params = study_params_from(&mut eff);

    let report = pointwise_risk_mc(&model, &sched, replications, master_seed, true)?;
    let xi = &report.xi_samples.as_ref().expect("diagnostic mode collects ξ̂")[0];
    let ks = ks_test_standard_normal(xi)?;
    let concentration =
        concentration_exceedance(&model, &t_grid, replications, kappa_star, &params, master_seed)?;

    let doc = serde_json::json!({
        "config": eff.echo_settings(),
        "ks": ks,
        "risk_summary": {
            "t": sched.t_horizon,
            "replications": replications,
            "risk": report.empirical_risk[0],
            "risk_stderr": report.mc_stderr[0],
            "normalized_risk": report.normalized_risk[0],
            "gamma_fail_rate": report.gamma_fail_rate[0],
            "u_star": report.u_star[0],
        },
        "concentration": concentration,
    });
    Ok(Artifacts::text(json_body(&doc)?, &eff))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small, fast settings shared by the Monte Carlo pipeline tests:
    /// T = 30 with the wide truncation band (a₀ = 1) keeps Γ common.
    fn mc_settings() -> Settings {
        Settings {
            t: Some(30.0),
            a0: Some(1.0),
            replications: Some(6),
            master_seed: Some(7),
            ..Default::default()
        }
    }

    fn body_text(artifacts: &Artifacts) -> &str {
        match &artifacts.body {
            Body::Text(s) => s,
            Body::Bytes(_) => panic!("expected text body"),
        }
    }

    fn data_lines(body: &str) -> Vec<&str> {
        body.lines().filter(|l| !l.starts_with('#')).collect()
    }

    #[test]
    fn simulate_csv_echoes_config_and_round_trips() {
        let eff = Settings {
            t: Some(1.0),
            delta: Some(0.05),
            seed: Some(3),
            ..Default::default()
        };
        let a = simulate(eff.clone()).unwrap();
        let b = simulate(eff).unwrap();
        let body = body_text(&a);
        assert_eq!(body, body_text(&b), "same seed must give byte-identical bodies");
        assert!(body.starts_with("# "), "config echo missing");
        let lines = data_lines(body);
        assert_eq!(lines[0], "t,y");
        assert_eq!(lines.len(), 1 + 21, "header plus N+1 rows");
        // The echo block re-parses as flat TOML with the effective values.
        let toml_text: String = body
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| format!("{}\n", l.trim_start_matches("# ")))
            .collect();
        let echoed: Settings = toml::from_str(&toml_text).unwrap();
        assert_eq!(echoed.seed, Some(3));
        assert_eq!(echoed.substeps, Some(16), "defaults are materialized in the echo");
    }

    #[test]
    fn simulate_binary_needs_output_and_json_is_rejected() {
        let base = Settings { t: Some(1.0), delta: Some(0.1), ..Default::default() };
        let bin = Settings { format: Some(Format::Bin), ..base.clone() };
        let err = simulate(bin).unwrap_err();
        assert!(err.to_string().contains("output"), "{err}");
        let json = Settings { format: Some(Format::Json), ..base };
        assert!(simulate(json).is_err());
    }

    #[test]
    fn estimate_from_stored_file_matches_in_memory_run() {
        let dir = tempfile::tempdir().unwrap();
        // Build a schedule first so the simulated path uses its δ.
        let sched = make_schedule(
            30.0,
            DEFAULT_GAMMA,
            DEFAULT_GAMMA0,
            DEFAULT_BETA,
            0.0,
            ScheduleOverrides { a0: Some(1.0), ..Default::default() },
        )
        .unwrap();
        let model = ModelTheta::parse("ou(1)").unwrap();
        let cfg = SimulationConfig::new(30.0, sched.delta);
        let path = simulate_path(&model, &cfg, 11).unwrap();
        let expected = estimate_drift(&path, &sched, None).unwrap();

        let writers: [(&str, Box<dyn Fn(&Path)>); 2] = [
            ("stored.bin", Box::new(|p: &Path| path.write_binary(p).unwrap())),
            ("stored.csv", Box::new(|p: &Path| path.write_csv(p).unwrap())),
        ];
        for (name, write) in &writers {
            let file = dir.path().join(name);
            write(&file);
            let eff = Settings {
                t: Some(30.0),
                a0: Some(1.0),
                path: Some(file),
                ..Default::default()
            };
            let artifacts = estimate(eff).unwrap();
            let doc: serde_json::Value = serde_json::from_str(body_text(&artifacts)).unwrap();
            for key in ["estimate", "stop_index", "kappa", "threshold", "gamma_event"] {
                assert!(!doc["outcome"][key].is_null(), "{name}: missing outcome.{key}");
            }
            assert_eq!(
                doc["outcome"]["estimate"].as_f64().unwrap(),
                expected.estimate,
                "{name}: stored-file route must reproduce the in-memory estimate"
            );
            assert_eq!(doc["schedule"]["t_horizon"].as_f64().unwrap(), 30.0);
            assert!(doc["config"].is_object());
        }
    }

    #[test]
    fn estimate_infers_horizon_and_step_from_stored_file() {
        let dir = tempfile::tempdir().unwrap();
        let sched = make_schedule(
            30.0,
            DEFAULT_GAMMA,
            DEFAULT_GAMMA0,
            DEFAULT_BETA,
            0.0,
            ScheduleOverrides { a0: Some(1.0), ..Default::default() },
        )
        .unwrap();
        let model = ModelTheta::parse("ou(1)").unwrap();
        let path = simulate_path(&model, &SimulationConfig::new(30.0, sched.delta), 11).unwrap();
        let file = dir.path().join("stored.bin");
        path.write_binary(&file).unwrap();

        // No `t`, no `delta`: both come from the file header.
        let eff = Settings { a0: Some(1.0), path: Some(file), ..Default::default() };
        let artifacts = estimate(eff).unwrap();
        let doc: serde_json::Value = serde_json::from_str(body_text(&artifacts)).unwrap();
        assert_eq!(doc["schedule"]["delta"].as_f64().unwrap(), path.delta);
        let t = doc["schedule"]["t_horizon"].as_f64().unwrap();
        assert!((t - 30.0).abs() <= path.delta, "inferred horizon {t} should be ~30");
        assert_eq!(doc["config"]["t"].as_f64().unwrap(), t, "inferred horizon must be echoed");

        // The route must be exactly the library run on the inferred schedule.
        let inferred = make_schedule(
            t,
            DEFAULT_GAMMA,
            DEFAULT_GAMMA0,
            DEFAULT_BETA,
            0.0,
            ScheduleOverrides { a0: Some(1.0), delta: Some(path.delta), ..Default::default() },
        )
        .unwrap();
        assert_eq!(doc["schedule"], serde_json::to_value(&inferred).unwrap());
        let got = doc["outcome"]["estimate"].as_f64().unwrap();
        assert_eq!(got, estimate_drift(&path, &inferred, None).unwrap().estimate);

        // Against the explicit T = 30 run the horizon differs by a sub-δ
        // remainder; the stopping boundary may shift a step, so agreement is
        // only to a small fraction of the sampling noise, not bit-exact.
        let expected = estimate_drift(&path, &sched, None).unwrap();
        assert!(
            (got - expected.estimate).abs() <= 5e-3,
            "inferred-schedule estimate {got} vs explicit {}",
            expected.estimate
        );
    }

    #[test]
    fn estimate_inline_is_deterministic_and_rejects_csv_format() {
        let eff = Settings { t: Some(30.0), a0: Some(1.0), seed: Some(5), ..Default::default() };
        let a = estimate(eff.clone()).unwrap();
        let b = estimate(eff.clone()).unwrap();
        assert_eq!(body_text(&a), body_text(&b));
        let doc: serde_json::Value = serde_json::from_str(body_text(&a)).unwrap();
        assert_eq!(doc["provenance"]["source"], "inline");

        let bad = Settings { format: Some(Format::Csv), ..eff };
        assert!(estimate(bad).is_err());
    }

    #[test]
    fn risk_csv_has_pinned_columns_and_is_deterministic() {
        let artifacts = risk(mc_settings()).unwrap();
        let body = body_text(&artifacts);
        let lines = data_lines(body);
        assert_eq!(
            lines[0],
            "T,reps,risk,risk_stderr,normalized_risk,gamma_fail_rate,U_star"
        );
        assert_eq!(lines.len(), 2, "one data row for one horizon");
        let cells: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cells.len(), 7);
        assert_eq!(cells[0].parse::<f64>().unwrap(), 30.0);
        assert_eq!(cells[1], "6");
        for cell in &cells[2..] {
            assert!(cell.parse::<f64>().is_ok(), "unparseable cell {cell}");
        }
        let again = risk(mc_settings()).unwrap();
        assert_eq!(body, body_text(&again), "same master seed, same bytes");
    }

    #[test]
    fn risk_json_embeds_config_and_report() {
        let eff = Settings { format: Some(Format::Json), ..mc_settings() };
        let doc: serde_json::Value =
            serde_json::from_str(body_text(&risk(eff).unwrap())).unwrap();
        assert_eq!(doc["config"]["master_seed"], 7);
        assert_eq!(doc["config"]["model"], "ou(1)", "defaults materialized");
        assert_eq!(doc["report"]["t_grid"][0], 30.0);
        assert!(doc["report"]["seeds"]["stream_scheme"].is_string());
    }

    #[test]
    fn study_emits_one_row_per_horizon_and_a_dump() {
        let dump_path = PathBuf::from("unused.csv");
        let eff = Settings {
            t_grid: Some(vec![30.0, 45.0]),
            reps_grid: Some(vec![6, 6]),
            a0: Some(1.0),
            master_seed: Some(9),
            dump_replications: Some(dump_path.clone()),
            ..Default::default()
        };
        let artifacts = study(eff.clone()).unwrap();
        let lines = data_lines(body_text(&artifacts));
        assert_eq!(lines.len(), 3, "header + two horizons");
        let (path, dump) = artifacts.dump.as_ref().unwrap();
        assert_eq!(path, &dump_path);
        let dump_lines: Vec<&str> = dump.lines().collect();
        assert_eq!(
            dump_lines[0],
            "T,replication,estimate,abs_error,gamma_event,q_hat,threshold,stop_index,xi_stat"
        );
        assert_eq!(dump_lines.len(), 1 + 12, "6 replications at each of 2 horizons");

        let json = Settings { format: Some(Format::Json), ..eff };
        let doc: serde_json::Value =
            serde_json::from_str(body_text(&study(json).unwrap())).unwrap();
        assert!(doc["trend"]["no_upward_trend"].is_boolean());
        assert_eq!(doc["config"]["reps_grid"][1], 6);
    }

    #[test]
    fn oracle_table_matches_closed_form_at_zero() {
        let eff = Settings {
            x_min: Some(-1.0),
            x_max: Some(1.0),
            points: Some(11),
            ..Default::default()
        };
        let body = body_text(&oracle(eff).unwrap()).to_string();
        let lines = data_lines(&body);
        assert_eq!(lines[0], "x,q");
        assert_eq!(lines.len(), 12);
        let mid: Vec<&str> = lines[6].split(',').collect();
        assert_eq!(mid[0].parse::<f64>().unwrap(), 0.0);
        let q0 = mid[1].parse::<f64>().unwrap();
        assert!(
            (q0 - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-10,
            "q(0) = {q0}"
        );

        let bad = Settings { x_min: Some(2.0), x_max: Some(-2.0), ..Default::default() };
        assert!(oracle(bad).is_err());
    }

    #[test]
    fn diagnose_reports_ks_and_concentration() {
        let eff = Settings {
            t: Some(30.0),
            a0: Some(1.0),
            replications: Some(300),
            master_seed: Some(12),
            ..Default::default()
        };
        let doc: serde_json::Value =
            serde_json::from_str(body_text(&diagnose(eff).unwrap())).unwrap();
        let p = doc["ks"]["p_value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert!(doc["ks"]["n"].as_u64().unwrap() >= 100);
        assert_eq!(doc["concentration"].as_array().unwrap().len(), 1);
        assert!(doc["risk_summary"]["gamma_fail_rate"].as_f64().unwrap() < 1.0);
        assert_eq!(doc["config"]["diagnostic"], true);
    }

    #[test]
    fn missing_required_field_is_named() {
        let err = risk(Settings::default()).unwrap_err();
        assert!(err.to_string().contains("`t`"), "{err}");
        let err = simulate(Settings { t: Some(1.0), ..Default::default() }).unwrap_err();
        assert!(err.to_string().contains("`delta`"), "{err}");
    }
}
