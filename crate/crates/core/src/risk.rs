//! Monte Carlo risk evaluation for the sequential drift estimator:
//! pointwise risk, minimax normalization, the nonasymptotic upper bound,
//! the efficiency constant, trend analysis across horizons, and the
//! occupation-concentration diagnostic.
//!
//! # Conventions
//!
//! * **Conditional headline risk.** The estimator hard-zeroes its output
//!   off the event Γ = {ϖ ≤ N}, so the absolute error off Γ is |S(x₀)|
//!   regardless of the data. `empirical_risk` is therefore the mean of
//!   |S*(x₀) − S(x₀)| over the Γ replications, with the Γ-failure rate
//!   and the unconditional mean (which includes the |S(x₀)| penalty)
//!   reported alongside.
//! * **Stationary starts.** Every replication draws y₀ from the
//!   invariant-density oracle with its own RNG stream before simulating.
//!   The pre-estimate window spans only ~10 time units at desk horizons;
//!   starting all paths at a fixed point leaves a measurable transient
//!   bias in the density pre-estimate (≈ +0.056 at T = 200 for the
//!   standard mean-reverting model), while stationary starts are unbiased
//!   and make the concentration statistic exactly centered.
//! * **Determinism.** Replication r at grid position i uses the ChaCha
//!   stream `(i << 32) | r` of the master seed. Work is distributed over
//!   the global worker pool, results are collected in replication order,
//!   and aggregation is sequential compensated summation — reports are
//!   bit-identical across runs and across worker counts.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::estimator::{
    estimate_drift_streaming, make_schedule, EstimatorSchedule, ScheduleOverrides,
};
use crate::model::ModelTheta;
use crate::oracle::{sample_stationary, DensityConfig, InvariantDensity, MomentBoundConstants};
use crate::quad::KahanSum;
use crate::sde::{replication_stream, SdeStream};

/// Substeps of the fine integrator grid per observation step, for models
/// without an exact transition sampler (matches the simulator default).
const DEFAULT_SUBSTEPS: usize = 16;

/// Quadrature tolerance for window-mass integrals against the invariant
/// density oracle.
const WINDOW_MASS_TOL: f64 = 1e-9;

/// Minimax normalization rate φ_T = T^{β/(2β+1)}.
///
/// # Errors
///
/// [`Error::InvalidArgument`] if T ≤ 0 or β ∉ (1,2).
pub fn minimax_rate(t_horizon: f64, beta: f64) -> Result<f64> {
    if !(t_horizon > 0.0) {
        return Err(Error::invalid(format!("minimax rate needs T > 0, got {t_horizon}")));
    }
    if !(beta > 1.0 && beta < 2.0) {
        return Err(Error::invalid(format!("beta must lie in (1,2), got {beta}")));
    }
    Ok(t_horizon.powf(beta / (2.0 * beta + 1.0)))
}

/// Efficiency constant ς*(x₀) = 2q(x₀)/σ²(x₀) from explicit density and
/// diffusion values.
///
/// # Errors
///
/// [`Error::InvalidArgument`] if q < 0 or σ ≤ 0.
pub fn efficiency_constant_from_parts(q_x0: f64, sigma_x0: f64) -> Result<f64> {
    if !(q_x0 >= 0.0) || !q_x0.is_finite() {
        return Err(Error::invalid(format!("density value must be ≥ 0, got {q_x0}")));
    }
    if !(sigma_x0 > 0.0) {
        return Err(Error::invalid(format!("diffusion value must be > 0, got {sigma_x0}")));
    }
    Ok(2.0 * q_x0 / (sigma_x0 * sigma_x0))
}

/// Efficiency constant ς*(x₀) = 2q(x₀)/σ²(x₀), with q from the
/// invariant-density oracle.
///
/// # Errors
///
/// Propagates density-oracle construction failures.
pub fn efficiency_constant(model: &ModelTheta, x0: f64) -> Result<f64> {
    let density = InvariantDensity::build(model, &DensityConfig::default())?;
    efficiency_constant_from_parts(density.density(x0), model.diffusion(x0))
}

/// E|ξ| for standard normal ξ: √(2/π) ≈ 0.7978846 — the asymptotic value
/// of the normalized risk.
pub fn normal_abs_moment() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

/// The three terms of the nonasymptotic risk bound, separately:
/// `[discretization, bias, stochastic]` where
///
/// ```text
/// discretization = max(L,M)·√(δ·L₁),  L₁ = 2(σ²max + 2δ(M² + L³D* + L²x*²))
/// bias           = M·h
/// stochastic     = σmax / (√(δ·h·(N−N₀)) · υ^{1/4})
/// ```
///
/// with D* = (M + Lx* + 2x*)²(L+M) + σ²max.
pub fn upper_bound_u_terms(
    sched: &EstimatorSchedule,
    l: f64,
    m: f64,
    sigma_max: f64,
    x_star: f64,
) -> [f64; 3] {
    let d_star = MomentBoundConstants::from_constants(l, m, x_star, sigma_max).d_star;
    let l1 = 2.0
        * (sigma_max * sigma_max
            + 2.0 * sched.delta * (m * m + l.powi(3) * d_star + l * l * x_star * x_star));
    let discretization = l.max(m) * (sched.delta * l1).sqrt();
    let bias = m * sched.h;
    let stochastic = sigma_max
        / ((sched.delta * sched.h * (sched.n - sched.n0) as f64).sqrt()
            * sched.upsilon.powf(0.25));
    [discretization, bias, stochastic]
}

/// Nonasymptotic pointwise risk bound U*(δ,h,T): the sum of the three
/// [`upper_bound_u_terms`]. Always ≥ M·h.
pub fn upper_bound_u(
    sched: &EstimatorSchedule,
    l: f64,
    m: f64,
    sigma_max: f64,
    x_star: f64,
) -> f64 {
    upper_bound_u_terms(sched, l, m, sigma_max, x_star).iter().sum()
}

/// [`upper_bound_u`] with the class constants read off a model.
pub fn upper_bound_u_for_model(sched: &EstimatorSchedule, model: &ModelTheta) -> f64 {
    upper_bound_u(sched, model.l, model.m, model.sigma_max, model.x_star)
}

/// Result of a Kolmogorov–Smirnov test against the standard normal law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsOutcome {
    /// Supremum distance between empirical and standard normal CDFs.
    pub statistic: f64,
    /// Asymptotic p-value P(√n·D > √n·statistic) under H₀.
    pub p_value: f64,
    /// Sample size.
    pub n: usize,
}

/// Standard normal CDF.
#[inline]
fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Asymptotic Kolmogorov tail Q(x) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²x²}
/// (the limit law of √n·D under H₀; series truncated at 1e−16 terms).
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0f64;
    let mut sign = 1.0f64;
    for k in 1..=100u32 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sided KS test of `samples` against N(0,1) using the asymptotic
/// Kolmogorov distribution.
///
/// # Errors
///
/// [`Error::InvalidArgument`] if n < 100 (the asymptotic law is not a
/// usable approximation below that) or any sample is non-finite.
pub fn ks_test_standard_normal(samples: &[f64]) -> Result<KsOutcome> {
    let n = samples.len();
    if n < 100 {
        return Err(Error::invalid(format!(
            "KS against the asymptotic law needs n ≥ 100 samples, got {n}"
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("KS samples must all be finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n_f = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = std_normal_cdf(x);
        let upper = (i + 1) as f64 / n_f - cdf;
        let lower = cdf - i as f64 / n_f;
        d = d.max(upper).max(lower);
    }
    Ok(KsOutcome { statistic: d, p_value: kolmogorov_tail(n_f.sqrt() * d), n })
}

/// Everything recorded about a single Monte Carlo replication.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReplicationRecord {
    /// Replication index (also the low half of its RNG stream id).
    pub index: usize,
    /// The estimate field of the outcome (0 off Γ by definition).
    pub estimate: f64,
    /// |estimate − S(x₀)|; off Γ this is |S(x₀)|.
    pub abs_error: f64,
    /// Whether the stopping time landed inside the sample.
    pub gamma_event: bool,
    /// Density pre-estimate of this replication.
    pub q_hat: f64,
    /// Threshold H of this replication.
    pub threshold: f64,
    /// Stopping index ϖ.
    pub stop_index: usize,
    /// Normalized noise statistic ξ̂ (diagnostic mode, Γ replications).
    pub xi_stat: Option<f64>,
}

/// RNG provenance of a report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedProvenance {
    /// Master seed all streams derive from.
    pub master_seed: u64,
    /// Human-readable description of the stream derivation scheme.
    pub stream_scheme: String,
}

/// Schedule/experiment parameters shared by every horizon of a study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StudyParams {
    /// Class-shrinkage exponent γ.
    pub gamma: f64,
    /// Pre-estimate exponent γ₀.
    pub gamma0: f64,
    /// Smoothness exponent β.
    pub beta: f64,
    /// Estimation point x₀.
    pub x0: f64,
    /// Schedule overrides (stamped into provenance by the schedule).
    pub overrides: ScheduleOverrides,
    /// Acceptance band for the normalized risk around E|ξ|.
    pub band: (f64, f64),
}

impl Default for StudyParams {
    fn default() -> Self {
        StudyParams {
            gamma: 0.5,
            gamma0: 0.75,
            beta: 1.5,
            x0: 0.0,
            overrides: ScheduleOverrides::default(),
            band: (0.6, 1.4),
        }
    }
}

impl StudyParams {
    /// Build the schedule for one horizon of the study.
    pub fn schedule(&self, t_horizon: f64) -> Result<EstimatorSchedule> {
        make_schedule(t_horizon, self.gamma, self.gamma0, self.beta, self.x0, self.overrides)
    }
}

/// Monte Carlo risk evaluation across a grid of horizons.
///
/// All per-horizon vectors are indexed like `t_grid`. The headline
/// `empirical_risk` is conditional on Γ (see module docs); the
/// unconditional mean and Γ-failure rate are reported alongside.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiskReport {
    /// Horizons.
    pub t_grid: Vec<f64>,
    /// Replications per horizon.
    pub replications: Vec<usize>,
    /// Mean |S* − S(x₀)| over Γ replications.
    pub empirical_risk: Vec<f64>,
    /// Mean |S* − S(x₀)| over all replications (|S(x₀)| off Γ).
    pub unconditional_risk: Vec<f64>,
    /// φ_T·√ς*·empirical_risk.
    pub normalized_risk: Vec<f64>,
    /// Fraction of replications with ϖ > N.
    pub gamma_fail_rate: Vec<f64>,
    /// Monte Carlo standard error of `empirical_risk`.
    pub mc_stderr: Vec<f64>,
    /// Nonasymptotic bound U* per horizon.
    pub u_star: Vec<f64>,
    /// ς*(x₀) used in the normalization.
    pub efficiency_constant: f64,
    /// ξ̂ samples from Γ replications per horizon (diagnostic mode only).
    pub xi_samples: Option<Vec<Vec<f64>>>,
    /// Full per-replication records per horizon.
    pub replication_records: Vec<Vec<ReplicationRecord>>,
    /// RNG provenance.
    pub seeds: SeedProvenance,
}

/// Per-horizon aggregates produced by one Monte Carlo sweep.
struct SingleHorizon {
    records: Vec<ReplicationRecord>,
    conditional_risk: f64,
    unconditional_risk: f64,
    gamma_fail_rate: f64,
    mc_stderr: f64,
    xi: Vec<f64>,
}

fn stream_scheme_description() -> String {
    "chacha8(master_seed) with stream id (t_index << 32) | replication".to_string()
}

/// Run `replications` independent replications of simulate → estimate at
/// one horizon and aggregate.
fn run_single_horizon(
    model: &ModelTheta,
    density: &InvariantDensity,
    sched: &EstimatorSchedule,
    replications: usize,
    master_seed: u64,
    t_index: u64,
    diagnostic: bool,
) -> Result<SingleHorizon> {
    let s_x0 = model.drift(sched.x0);
    let raw: Vec<Result<ReplicationRecord>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let stream_id = (t_index << 32) | rep as u64;
            let run = || -> Result<ReplicationRecord> {
                let mut rng = replication_stream(master_seed, stream_id);
                let y0 = sample_stationary(density, &mut rng);
                let stream = SdeStream::new(model, sched.delta, DEFAULT_SUBSTEPS, y0, rng)?;
                let out = estimate_drift_streaming(model, sched, stream, diagnostic)?;
                Ok(ReplicationRecord {
                    index: rep,
                    estimate: out.estimate,
                    abs_error: (out.estimate - s_x0).abs(),
                    gamma_event: out.gamma_event,
                    q_hat: out.q_hat.unwrap_or(f64::NAN),
                    threshold: out.threshold,
                    stop_index: out.stop_index,
                    xi_stat: out.diagnostics.filter(|_| out.gamma_event).map(|d| d.xi_stat),
                })
            };
            run().map_err(|e| {
                Error::Evaluation(format!(
                    "replication {rep} (master seed {master_seed}, stream {stream_id}) failed: {e}"
                ))
            })
        })
        .collect();
    let mut records = Vec::with_capacity(replications);
    for r in raw {
        records.push(r?);
    }

    // Sequential compensated aggregation in replication order.
    let mut uncond = KahanSum::new();
    let mut cond = KahanSum::new();
    let mut n_gamma = 0usize;
    for rec in &records {
        uncond.add(rec.abs_error);
        if rec.gamma_event {
            cond.add(rec.abs_error);
            n_gamma += 1;
        }
    }
    let conditional_risk = if n_gamma > 0 { cond.total() / n_gamma as f64 } else { f64::NAN };
    let mc_stderr = if n_gamma > 1 {
        let mut sq = KahanSum::new();
        for rec in records.iter().filter(|r| r.gamma_event) {
            sq.add((rec.abs_error - conditional_risk).powi(2));
        }
        (sq.total() / ((n_gamma - 1) as f64)).sqrt() / (n_gamma as f64).sqrt()
    } else {
        f64::NAN
    };
    let xi = records.iter().filter_map(|r| r.xi_stat).collect();
    Ok(SingleHorizon {
        conditional_risk,
        unconditional_risk: uncond.total() / replications as f64,
        gamma_fail_rate: (replications - n_gamma) as f64 / replications as f64,
        mc_stderr,
        xi,
        records,
    })
}

fn assemble_report(
    model: &ModelTheta,
    density: &InvariantDensity,
    t_grid: &[f64],
    schedules: &[EstimatorSchedule],
    reps_grid: &[usize],
    sweeps: Vec<SingleHorizon>,
    master_seed: u64,
    diagnostic: bool,
) -> Result<RiskReport> {
    let x0 = schedules[0].x0;
    let varsigma_star = efficiency_constant_from_parts(density.density(x0), model.diffusion(x0))?;
    let mut report = RiskReport {
        t_grid: t_grid.to_vec(),
        replications: reps_grid.to_vec(),
        empirical_risk: Vec::new(),
        unconditional_risk: Vec::new(),
        normalized_risk: Vec::new(),
        gamma_fail_rate: Vec::new(),
        mc_stderr: Vec::new(),
        u_star: Vec::new(),
        efficiency_constant: varsigma_star,
        xi_samples: diagnostic.then(Vec::new),
        replication_records: Vec::new(),
        seeds: SeedProvenance { master_seed, stream_scheme: stream_scheme_description() },
    };
    for (sweep, sched) in sweeps.into_iter().zip(schedules) {
        let phi = minimax_rate(sched.t_horizon, sched.beta)?;
        report.empirical_risk.push(sweep.conditional_risk);
        report.unconditional_risk.push(sweep.unconditional_risk);
        report.normalized_risk.push(phi * varsigma_star.sqrt() * sweep.conditional_risk);
        report.gamma_fail_rate.push(sweep.gamma_fail_rate);
        report.mc_stderr.push(sweep.mc_stderr);
        report.u_star.push(upper_bound_u_for_model(sched, model));
        if let Some(xi) = report.xi_samples.as_mut() {
            xi.push(sweep.xi);
        }
        report.replication_records.push(sweep.records);
    }
    Ok(report)
}

/// Monte Carlo pointwise risk at a single schedule.
///
/// Simulates `replications` independent stationary-start paths, runs the
/// sequential estimator on each (fused streaming pass), and aggregates
/// conditional/unconditional risk, Γ-failure rate, Monte Carlo standard
/// error, normalized risk, and (in diagnostic mode) ξ̂ samples.
///
/// # Errors
///
/// [`Error::InvalidArgument`] if `replications` < 2; any replication
/// failure aborts the sweep with the offending stream reported.
pub fn pointwise_risk_mc(
    model: &ModelTheta,
    sched: &EstimatorSchedule,
    replications: usize,
    master_seed: u64,
    diagnostic: bool,
) -> Result<RiskReport> {
    if replications < 2 {
        return Err(Error::invalid(format!("need at least 2 replications, got {replications}")));
    }
    let density = InvariantDensity::build(model, &DensityConfig::default())?;
    let sweep =
        run_single_horizon(model, &density, sched, replications, master_seed, 0, diagnostic)?;
    assemble_report(
        model,
        &density,
        &[sched.t_horizon],
        std::slice::from_ref(sched),
        &[replications],
        vec![sweep],
        master_seed,
        diagnostic,
    )
}

/// Slope verdict of a study: is the normalized risk flat-or-decreasing in
/// ln T, and does it stay inside the configured band around E|ξ|?
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrendVerdict {
    /// OLS slope of normalized risk against ln T (None for a single-point
    /// grid).
    pub slope: Option<f64>,
    /// Propagated Monte Carlo standard error of the slope.
    pub slope_stderr: Option<f64>,
    /// slope ≤ 0 within two standard errors (vacuously true for a
    /// single-point grid).
    pub no_upward_trend: bool,
    /// Every normalized risk inside `band`.
    pub all_in_band: bool,
    /// The band used.
    pub band: (f64, f64),
}

/// A risk report plus its trend verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyOutcome {
    /// Per-horizon Monte Carlo results.
    pub report: RiskReport,
    /// Band and slope verdict over the grid.
    pub trend: TrendVerdict,
}

/// OLS slope of y on x with per-point standard errors propagated into the
/// slope's standard error. Requires ≥ 2 points with distinct x.
fn ols_slope(x: &[f64], y: &[f64], sigma: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let x_bar = x.iter().sum::<f64>() / n;
    let y_bar = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&xi| (xi - x_bar).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&xi, &yi)| (xi - x_bar) * (yi - y_bar)).sum();
    let slope = sxy / sxx;
    let var: f64 = x
        .iter()
        .zip(sigma)
        .map(|(&xi, &si)| ((xi - x_bar) * si).powi(2))
        .sum::<f64>()
        / (sxx * sxx);
    (slope, var.sqrt())
}

/// Monte Carlo efficiency study across an ascending grid of horizons.
///
/// Runs [`pointwise_risk_mc`]'s sweep at every horizon with schedules
/// built from `params`, then checks that the normalized risk stays inside
/// `params.band` and shows no statistically significant upward trend
/// against ln T (slope ≤ 0 within 2 standard errors).
///
/// # Errors
///
/// [`Error::InvalidArgument`] on an empty/descending grid, mismatched
/// grid lengths, or replications < 2; replication failures propagate.
pub fn efficiency_study(
    model: &ModelTheta,
    t_grid: &[f64],
    reps_grid: &[usize],
    params: &StudyParams,
    master_seed: u64,
    diagnostic: bool,
) -> Result<StudyOutcome> {
    if t_grid.is_empty() || t_grid.len() != reps_grid.len() {
        return Err(Error::invalid(format!(
            "horizon grid ({}) and replication grid ({}) must be nonempty and equal-length",
            t_grid.len(),
            reps_grid.len()
        )));
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("horizon grid must be strictly ascending"));
    }
    if let Some(&r) = reps_grid.iter().find(|&&r| r < 2) {
        return Err(Error::invalid(format!("need at least 2 replications per horizon, got {r}")));
    }

    let density = InvariantDensity::build(model, &DensityConfig::default())?;
    let mut schedules = Vec::with_capacity(t_grid.len());
    let mut sweeps = Vec::with_capacity(t_grid.len());
    for (i, (&t, &reps)) in t_grid.iter().zip(reps_grid).enumerate() {
        let sched = params.schedule(t)?;
        let sweep =
            run_single_horizon(model, &density, &sched, reps, master_seed, i as u64, diagnostic)?;
        schedules.push(sched);
        sweeps.push(sweep);
    }
    let report = assemble_report(
        model,
        &density,
        t_grid,
        &schedules,
        reps_grid,
        sweeps,
        master_seed,
        diagnostic,
    )?;

    let all_in_band = report
        .normalized_risk
        .iter()
        .all(|&r| r.is_finite() && r >= params.band.0 && r <= params.band.1);
    let trend = if t_grid.len() >= 2 {
        let x: Vec<f64> = t_grid.iter().map(|&t| t.ln()).collect();
        let sigma: Vec<f64> = report
            .mc_stderr
            .iter()
            .zip(&report.normalized_risk)
            .zip(&report.empirical_risk)
            .map(|((&se, &norm), &risk)| se * norm / risk)
            .collect();
        let (slope, slope_stderr) = ols_slope(&x, &report.normalized_risk, &sigma);
        TrendVerdict {
            slope: Some(slope),
            slope_stderr: Some(slope_stderr),
            no_upward_trend: slope <= 2.0 * slope_stderr,
            all_in_band,
            band: params.band,
        }
    } else {
        TrendVerdict {
            slope: None,
            slope_stderr: None,
            no_upward_trend: true,
            all_in_band,
            band: params.band,
        }
    };
    Ok(StudyOutcome { report, trend })
}

/// One horizon of the occupation-concentration diagnostic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConcentrationPoint {
    /// Horizon T.
    pub t_horizon: f64,
    /// Replications evaluated.
    pub replications: usize,
    /// Frequency of δ·|D_N(χ_h)| ≥ κ*·T.
    pub exceedance_frequency: f64,
    /// Largest observed δ·|D_N|/T (how far below κ* the paths sat).
    pub max_scaled_deviation: f64,
    /// Oracle window mass m(χ_h) = ∫ χ_h q used for centering.
    pub window_mass: f64,
}

/// Empirical exceedance of the centered occupation deviation
/// D_N(χ_h) = Σ_{k=1..N} (χ_h(y_{t_k}) − m(χ_h)).
///
/// The comparison runs on the time scale: a replication exceeds when
/// δ·|D_N| ≥ κ*·T, i.e. when the occupation time of the h-window over
/// [0,T] deviates from its ergodic value by at least κ*·T. (The raw count
/// D_N sums N = T/δ terms, so its natural fluctuation scale is √T/δ —
/// comparing the *count* against κ*·T would make every path exceed at
/// every horizon and the diagnostic vacuous; the δ-weighted form is the
/// coherent reading and the one whose exceedance vanishes as T grows.)
///
/// # Errors
///
/// [`Error::InvalidArgument`] on an invalid grid, κ* ≤ 0, or
/// replications < 1; simulation failures propagate.
pub fn concentration_exceedance(
    model: &ModelTheta,
    t_grid: &[f64],
    replications: usize,
    kappa_star: f64,
    params: &StudyParams,
    master_seed: u64,
) -> Result<Vec<ConcentrationPoint>> {
    if t_grid.is_empty() {
        return Err(Error::invalid("horizon grid must be nonempty"));
    }
    if !(kappa_star > 0.0) {
        return Err(Error::invalid(format!("kappa_star must be > 0, got {kappa_star}")));
    }
    if replications < 1 {
        return Err(Error::invalid("need at least 1 replication"));
    }
    let density = InvariantDensity::build(model, &DensityConfig::default())?;
    let mut points = Vec::with_capacity(t_grid.len());
    for (i, &t) in t_grid.iter().enumerate() {
        let sched = params.schedule(t)?;
        let (lo, hi) = (sched.x0 - sched.h, sched.x0 + sched.h);
        let window_mass =
            density.mean(|x| f64::from(x >= lo && x <= hi), &[lo, hi], WINDOW_MASS_TOL)?;
        let scaled: Vec<Result<f64>> = (0..replications)
            .into_par_iter()
            .map(|rep| {
                let stream_id = ((i as u64) << 32) | rep as u64;
                let mut rng = replication_stream(master_seed, stream_id);
                let y0 = sample_stationary(&density, &mut rng);
                let mut stream = SdeStream::new(model, sched.delta, DEFAULT_SUBSTEPS, y0, rng)?;
                let mut dev = KahanSum::new();
                for _ in 0..sched.n {
                    let y = stream.step().y_next;
                    dev.add(f64::from(y >= lo && y <= hi) - window_mass);
                }
                Ok(sched.delta * dev.total().abs())
            })
            .collect();
        let mut exceed = 0usize;
        let mut max_scaled = 0.0f64;
        for s in scaled {
            let s = s?;
            max_scaled = max_scaled.max(s / t);
            if s >= kappa_star * t {
                exceed += 1;
            }
        }
        points.push(ConcentrationPoint {
            t_horizon: t,
            replications,
            exceedance_frequency: exceed as f64 / replications as f64,
            max_scaled_deviation: max_scaled,
            window_mass,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::StandardNormal;

    #[test]
    fn minimax_rate_frozen_values() {
        // T^{β/(2β+1)} with β = 1.5 is the 0.375 power.
        assert_abs_diff_eq!(minimax_rate(10_000.0, 1.5).unwrap(), 31.6228, epsilon = 1e-4);
        assert_abs_diff_eq!(minimax_rate(1.0, 1.7).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(minimax_rate(256.0, 1.5).unwrap(), 8.0, epsilon = 1e-12);
        assert!(minimax_rate(0.0, 1.5).is_err());
        assert!(minimax_rate(100.0, 2.5).is_err());
    }

    #[test]
    fn normal_abs_moment_value_and_mc_consistency() {
        let m = normal_abs_moment();
        assert_abs_diff_eq!(m, 0.7978846, epsilon = 1e-7);
        // √(2/π)²·π/2 = 1.
        assert_abs_diff_eq!(m * m * std::f64::consts::PI / 2.0, 1.0, epsilon = 1e-15);
        // Monte Carlo consistency over 10⁶ draws.
        let mut rng = replication_stream(7, 0);
        let mut sum = KahanSum::new();
        let n = 1_000_000;
        for _ in 0..n {
            let z: f64 = rand::Rng::sample(&mut rng, StandardNormal);
            sum.add(z.abs());
        }
        assert_abs_diff_eq!(sum.total() / n as f64, m, epsilon = 0.002);
    }

    #[test]
    fn efficiency_constant_oracle_and_scaling() {
        // Standard mean-reverting model: q(0) = 1/√π, σ = 1.
        let model = ModelTheta::parse("ou(1)").unwrap();
        let expected = 2.0 / std::f64::consts::PI.sqrt();
        assert_abs_diff_eq!(efficiency_constant(&model, 0.0).unwrap(), expected, epsilon = 1e-7);
        // Plain arithmetic from parts.
        assert_abs_diff_eq!(efficiency_constant_from_parts(0.5, 1.0).unwrap(), 1.0);
        // σ ↦ cσ at fixed q scales ς* by 1/c².
        let base = efficiency_constant_from_parts(0.37, 1.3).unwrap();
        let scaled = efficiency_constant_from_parts(0.37, 3.0 * 1.3).unwrap();
        assert_abs_diff_eq!(scaled, base / 9.0, epsilon = 1e-15);
        assert!(efficiency_constant_from_parts(0.5, 0.0).is_err());
        assert!(efficiency_constant_from_parts(-0.1, 1.0).is_err());
    }

    #[test]
    fn upper_bound_toy_arithmetic() {
        // δ=0.01, h=0.1, N=10⁵, N0=10³, L=M=σmax=x*=1, υ=0.04:
        //   D* = (1+1+2)²·2 + 1 = 33,  L₁ = 2(1 + 0.02·35) = 3.4,
        //   terms = 1·√0.034 + 0.1 + 1/(√(0.01·0.1·99000)·√0.2)
        //        ≈ 0.18439 + 0.1 + 0.22473 = 0.50912.
        let sched = EstimatorSchedule::unchecked(0.01, 100_000, 1_000, 0.1, 0.0, 0.01, 0.04);
        let terms = upper_bound_u_terms(&sched, 1.0, 1.0, 1.0, 1.0);
        assert_abs_diff_eq!(terms[0], 0.034f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(terms[1], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(terms[2], 1.0 / (99.0f64.sqrt() * 0.04f64.powf(0.25)), epsilon = 1e-12);
        let u = upper_bound_u(&sched, 1.0, 1.0, 1.0, 1.0);
        assert_abs_diff_eq!(u, 0.50912, epsilon = 1e-4);
        // U* ≥ Mh always; discretization term ↓ 0 monotonically as δ ↓.
        assert!(u >= 0.1);
        let mut last = f64::INFINITY;
        for delta in [1e-2, 1e-3, 1e-4, 1e-5] {
            let s = EstimatorSchedule::unchecked(delta, 100_000, 1_000, 0.1, 0.0, 0.01, 0.04);
            let t0 = upper_bound_u_terms(&s, 1.0, 1.0, 1.0, 1.0)[0];
            assert!(t0 < last);
            last = t0;
        }
        assert!(last < 1e-2);
    }

    #[test]
    fn kolmogorov_tail_frozen_quantiles() {
        // Known tail quantiles of the asymptotic KS law.
        assert_abs_diff_eq!(kolmogorov_tail(1.35810), 0.05, epsilon = 1e-3);
        assert_abs_diff_eq!(kolmogorov_tail(1.62762), 0.01, epsilon = 5e-4);
        assert_abs_diff_eq!(kolmogorov_tail(0.0), 1.0);
        assert!(kolmogorov_tail(5.0) < 1e-10);
    }

    #[test]
    fn ks_accepts_normal_rejects_uniform() {
        let mut rng = replication_stream(11, 0);
        let normal: Vec<f64> =
            (0..2000).map(|_| rand::Rng::sample(&mut rng, StandardNormal)).collect();
        let ok = ks_test_standard_normal(&normal).unwrap();
        assert!(ok.p_value > 0.01, "p = {}", ok.p_value);
        assert!(ok.statistic > 0.0 && ok.statistic < 0.05);

        let uniform: Vec<f64> =
            (0..2000).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let bad = ks_test_standard_normal(&uniform).unwrap();
        assert!(bad.p_value < 1e-6, "p = {}", bad.p_value);

        assert!(ks_test_standard_normal(&normal[..99]).is_err());
        assert!(ks_test_standard_normal(&[f64::NAN; 150]).is_err());
    }

    /// Small-horizon end-to-end sweep: determinism, the exact normalized
    /// recomputation invariant, and validation.
    #[test]
    fn pointwise_risk_is_deterministic_and_consistent() {
        let model = ModelTheta::parse("ou(1)").unwrap();
        let params = StudyParams {
            overrides: ScheduleOverrides { a0: Some(1.0), ..Default::default() },
            ..Default::default()
        };
        let sched = params.schedule(30.0).unwrap();
        let a = pointwise_risk_mc(&model, &sched, 24, 41, true).unwrap();
        let b = pointwise_risk_mc(&model, &sched, 24, 41, true).unwrap();
        assert_eq!(a, b, "same master seed must reproduce the report bit-identically");
        let c = pointwise_risk_mc(&model, &sched, 24, 42, true).unwrap();
        assert_ne!(a.empirical_risk, c.empirical_risk, "different seed, different draws");

        // normalized = φ√ς*·risk holds exactly by recomputation.
        let phi = minimax_rate(30.0, sched.beta).unwrap();
        let rebuilt = phi * a.efficiency_constant.sqrt() * a.empirical_risk[0];
        assert_eq!(a.normalized_risk[0].to_bits(), rebuilt.to_bits());

        // Per-replication records are complete and consistent.
        assert_eq!(a.replication_records[0].len(), 24);
        let fails =
            a.replication_records[0].iter().filter(|r| !r.gamma_event).count() as f64 / 24.0;
        assert_eq!(fails, a.gamma_fail_rate[0]);
        // ξ̂ collected exactly on Γ replications in diagnostic mode.
        assert_eq!(a.xi_samples.as_ref().unwrap()[0].len(), 24 - (fails * 24.0) as usize);

        assert!(pointwise_risk_mc(&model, &sched, 1, 41, false).is_err());
    }

    /// Monte Carlo standard error must shrink like 1/√reps across a
    /// doubling (within 20%, fixed seeds).
    #[test]
    fn stderr_scales_with_replications() {
        let model = ModelTheta::parse("ou(1)").unwrap();
        let params = StudyParams {
            overrides: ScheduleOverrides { a0: Some(1.0), ..Default::default() },
            ..Default::default()
        };
        let sched = params.schedule(30.0).unwrap();
        let small = pointwise_risk_mc(&model, &sched, 240, 17, false).unwrap();
        let large = pointwise_risk_mc(&model, &sched, 480, 17, false).unwrap();
        let ratio = small.mc_stderr[0] / large.mc_stderr[0];
        let root2 = std::f64::consts::SQRT_2;
        assert!(
            ratio > 0.8 * root2 && ratio < 1.2 * root2,
            "stderr ratio {ratio} not within 20% of √2"
        );
    }

    /// A one-point grid study is exactly a pointwise run.
    #[test]
    fn degenerate_study_equals_pointwise() {
        let model = ModelTheta::parse("ou(1)").unwrap();
        let params = StudyParams {
            overrides: ScheduleOverrides { a0: Some(1.0), ..Default::default() },
            ..Default::default()
        };
        let sched = params.schedule(30.0).unwrap();
        let single = pointwise_risk_mc(&model, &sched, 30, 5, false).unwrap();
        let study = efficiency_study(&model, &[30.0], &[30], &params, 5, false).unwrap();
        assert_eq!(study.report, single);
        assert_eq!(study.trend.slope, None);
        assert!(study.trend.no_upward_trend);
    }

    #[test]
    fn study_validates_grids_and_reports_trend() {
        let model = ModelTheta::parse("ou(1)").unwrap();
        let params = StudyParams {
            overrides: ScheduleOverrides { a0: Some(1.0), ..Default::default() },
            // Wide band: this is a structural test at tiny horizons, not
            // the efficiency claim.
            band: (0.1, 3.0),
            ..Default::default()
        };
        assert!(efficiency_study(&model, &[], &[], &params, 1, false).is_err());
        assert!(efficiency_study(&model, &[30.0, 20.0], &[4, 4], &params, 1, false).is_err());
        assert!(efficiency_study(&model, &[30.0], &[4, 4], &params, 1, false).is_err());
        assert!(efficiency_study(&model, &[30.0, 60.0], &[4, 1], &params, 1, false).is_err());

        let out = efficiency_study(&model, &[30.0, 60.0], &[80, 60], &params, 12, false).unwrap();
        assert_eq!(out.report.t_grid, vec![30.0, 60.0]);
        let slope = out.trend.slope.unwrap();
        let se = out.trend.slope_stderr.unwrap();
        assert!(slope.is_finite() && se > 0.0);
        // Conditional normalized risk at these horizons sits near 1.
        for &r in &out.report.normalized_risk {
            assert!((0.3..2.5).contains(&r), "normalized risk {r}");
        }
        // U* is a genuine upper bound already at toy scale.
        for (r, u) in out.report.empirical_risk.iter().zip(&out.report.u_star) {
            assert!(r < u, "risk {r} vs bound {u}");
        }
    }

    #[test]
    fn concentration_diagnostic_structure() {
        let model = ModelTheta::parse("ou(1)").unwrap();
        let params = StudyParams {
            overrides: ScheduleOverrides { a0: Some(1.0), ..Default::default() },
            ..Default::default()
        };
        let pts =
            concentration_exceedance(&model, &[30.0, 60.0], 60, 0.2, &params, 21).unwrap();
        assert_eq!(pts.len(), 2);
        for p in &pts {
            assert!((0.0..=1.0).contains(&p.exceedance_frequency));
            assert!(p.max_scaled_deviation > 0.0 && p.max_scaled_deviation.is_finite());
            // Window mass against the closed-form Gaussian occupation:
            // stationary N(0, 1/2) gives m = erf(h).
            let sched = params.schedule(p.t_horizon).unwrap();
            assert_abs_diff_eq!(p.window_mass, erf(sched.h), epsilon = 1e-6);
        }
        // Deterministic under the master seed.
        let again =
            concentration_exceedance(&model, &[30.0, 60.0], 60, 0.2, &params, 21).unwrap();
        assert_eq!(pts, again);
        assert!(concentration_exceedance(&model, &[], 60, 0.2, &params, 21).is_err());
        assert!(concentration_exceedance(&model, &[30.0], 60, 0.0, &params, 21).is_err());
    }
}
