//! Shared fixtures for the criterion benchmarks: models and schedules
//! sized so a single pass is fast (the bench binary also runs once per
//! bench in `cargo test` smoke mode) while the inner loops are still
//! dominated by the code under measurement.

use ergodrift::estimator::{make_schedule, EstimatorSchedule, ScheduleOverrides};
use ergodrift::model::ModelTheta;

/// Standard mean-reverting model with the exact transition sampler.
pub fn exact_model() -> ModelTheta {
    ModelTheta::parse("ou(1)").unwrap()
}

/// A model without a closed-form transition, forcing the Euler–Maruyama
/// integrator.
pub fn euler_model() -> ModelTheta {
    ModelTheta::parse("tanh_drift(1,0.5)+smooth_sigma(0.9,0.3)").unwrap()
}

/// Benchmark schedule: T = 50 with the wide truncation band, about
/// 2·10⁴ observation steps per replication.
pub fn bench_schedule() -> EstimatorSchedule {
    make_schedule(
        50.0,
        0.5,
        0.75,
        1.5,
        0.0,
        ScheduleOverrides { a0: Some(1.0), ..Default::default() },
    )
    .unwrap()
}
