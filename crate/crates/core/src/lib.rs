//! Sequential kernel estimation of the drift of a scalar ergodic diffusion
//! from high-frequency discrete observations.
//!
//! Given samples y_{t_0}, …, y_{t_N} of dy = S(y)dt + σ(y)dW on a uniform
//! grid t_j = jδ, the estimator targets S(x₀) pointwise: a short prefix
//! pre-estimates the invariant density near x₀, the pre-estimate sets a
//! data-dependent threshold H, and a stopping rule accumulates
//! indicator-kernel weights until they exactly exhaust H — which fixes the
//! stochastic integral's variance and makes the normalized noise term a
//! bona fide standard Gaussian rather than an asymptotic one.
//!
//! Module map:
//! - [`model`] — drift/diffusion catalog with class constants (L, M, σ_max, x*);
//! - [`sde`] — exact and Euler–Maruyama samplers, deterministic seeding;
//! - [`oracle`] — invariant-density quadrature, ergodic means, moment bounds;
//! - [`classes`] — weak Hölder modulus and the minimax perturbation family;
//! - [`estimator`] — schedule calibration, stopping rule, drift estimate,
//!   and the error decomposition Υ₁ + B + M;
//! - [`risk`] — Monte Carlo risk studies, the nonasymptotic upper bound U*,
//!   KS diagnostics, and the occupation-concentration check;
//! - [`quad`] — adaptive Simpson quadrature used by the oracles.

pub mod classes;
pub mod error;
pub mod estimator;
pub mod model;
pub mod oracle;
pub mod quad;
pub mod risk;
pub mod sde;

pub use classes::{HolderParams, PerturbationFamily};
pub use error::{Error, Result};
pub use estimator::{
    decompose_error, estimate_drift, estimate_drift_streaming, make_schedule,
    DecompositionDiagnostics, EstimationOutcome, EstimatorSchedule, ScheduleOverrides,
    StoppingOutcome, WeightSpec,
};
pub use model::{ModelTheta, SamplerKind};
pub use risk::{
    concentration_exceedance, efficiency_constant, efficiency_study, minimax_rate,
    normal_abs_moment, pointwise_risk_mc, upper_bound_u, ConcentrationPoint, KsOutcome,
    ReplicationRecord, RiskReport, StudyOutcome, StudyParams, TrendVerdict,
};
pub use oracle::{DensityConfig, InvariantDensity, MomentBoundConstants};
pub use sde::{simulate_path, PathSample, SimulationConfig};
