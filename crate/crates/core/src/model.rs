//! Diffusion models: drift/diffusion pairs with their class constants.
//!
//! A model is the pair ϑ = (S, σ) of a scalar diffusion
//!
//! ```text
//! dy_t = S(y_t) dt + σ(y_t) dW_t
//! ```
//!
//! together with the constants of the function class the pair is declared to
//! live in:
//!
//! - drift class Σ_{L,M}: |S(x)| + |Ṡ(x)| ≤ M on |x| ≤ x*, and the
//!   mean-reversion band −L ≤ Ṡ(x) ≤ −1/L for |x| ≥ x* (L > 1), which
//!   guarantees ergodicity with exponentially decaying invariant tails;
//! - diffusion class: σ_min ≤ |σ(x)| ≤ σ_max everywhere, with bounded first
//!   and second derivatives.
//!
//! Functions arrive as black boxes, so class membership is verified on a
//! grid ([`ModelTheta::check_class_membership`]) rather than symbolically.
//!
//! # Catalog
//!
//! Built-in drifts and diffusions are addressable by string id, combined
//! with `+`:
//!
//! | id | definition |
//! |----|------------|
//! | `ou(theta)` | S(x) = −θx |
//! | `tanh_drift(a,b)` | S(x) = −x − a·tanh(bx) |
//! | `const_sigma(s)` | σ(x) = s |
//! | `smooth_sigma(s0,s1)` | σ(x) = s0 + s1/(1+x²) |
//!
//! A bare drift id (e.g. `"ou(1)"`) implies `const_sigma(1)`. The
//! Ornstein–Uhlenbeck drift with constant diffusion additionally enables the
//! exact Gaussian transition sampler (see the simulation module).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Shared black-box scalar function.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// How a path for this model can be generated.
#[derive(Clone, Debug, PartialEq)]
pub enum SamplerKind {
    /// Ornstein–Uhlenbeck drift S(x) = −θx with constant diffusion:
    /// the Gaussian transition law is available in closed form.
    ExactOrnsteinUhlenbeck {
        /// Mean-reversion rate θ > 0.
        theta: f64,
        /// Constant diffusion coefficient σ > 0.
        sigma: f64,
    },
    /// Anything else: Euler–Maruyama on a refined grid.
    EulerMaruyama,
}

/// A drift/diffusion pair with its declared class constants.
///
/// Cloning is cheap (the function fields are shared).
#[derive(Clone)]
pub struct ModelTheta {
    /// Human-readable id, e.g. `"ou(1)+const_sigma(1)"`; echoed into output
    /// provenance and used as part of the determinism contract.
    pub id: String,
    /// Drift S.
    pub drift: ScalarFn,
    /// Drift derivative Ṡ (used by class checks and membership witnesses).
    pub drift_derivative: ScalarFn,
    /// Diffusion σ.
    pub diffusion: ScalarFn,
    /// Mean-reversion class constant L > 1.
    pub l: f64,
    /// Local drift bound M > 0 (bounds |S| + |Ṡ| on [−x*, x*]).
    pub m: f64,
    /// Radius x* ≥ 1 of the central region.
    pub x_star: f64,
    /// Lower diffusion bound σ_min > 0.
    pub sigma_min: f64,
    /// Upper diffusion bound σ_max ≥ σ_min.
    pub sigma_max: f64,
    /// Which path sampler applies.
    pub sampler: SamplerKind,
}

impl fmt::Debug for ModelTheta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelTheta")
            .field("id", &self.id)
            .field("l", &self.l)
            .field("m", &self.m)
            .field("x_star", &self.x_star)
            .field("sigma_min", &self.sigma_min)
            .field("sigma_max", &self.sigma_max)
            .field("sampler", &self.sampler)
            .finish_non_exhaustive()
    }
}

impl ModelTheta {
    /// Evaluate the drift at `x`.
    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    /// Evaluate the drift derivative at `x`.
    #[inline]
    pub fn drift_deriv(&self, x: f64) -> f64 {
        (self.drift_derivative)(x)
    }

    /// Evaluate the diffusion at `x`.
    #[inline]
    pub fn diffusion(&self, x: f64) -> f64 {
        (self.diffusion)(x)
    }

    /// Ornstein–Uhlenbeck model S(x) = −θx, σ(x) = s (both > 0).
    ///
    /// Class constants: L = 2·max(θ, 1/θ) (so −L ≤ −θ ≤ −1/L holds with
    /// slack), M = θ(x* + 1) (the exact supremum of |S| + |Ṡ| on [−x*, x*])
    /// and x* = 1.
    pub fn ornstein_uhlenbeck(theta: f64, sigma: f64) -> Result<Self> {
        if !(theta > 0.0) || !(sigma > 0.0) {
            return Err(Error::invalid(format!(
                "ornstein_uhlenbeck requires theta > 0 and sigma > 0, got theta = {theta}, sigma = {sigma}"
            )));
        }
        let x_star = 1.0;
        Ok(ModelTheta {
            id: format!("ou({theta})+const_sigma({sigma})"),
            drift: Arc::new(move |x| -theta * x),
            drift_derivative: Arc::new(move |_| -theta),
            diffusion: Arc::new(move |_| sigma),
            l: 2.0 * theta.max(1.0 / theta),
            m: theta * (x_star + 1.0),
            x_star,
            sigma_min: sigma,
            sigma_max: sigma,
            sampler: SamplerKind::ExactOrnsteinUhlenbeck { theta, sigma },
        })
    }

    /// Fully custom model; the caller vouches for the class constants.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        id: impl Into<String>,
        drift: ScalarFn,
        drift_derivative: ScalarFn,
        diffusion: ScalarFn,
        l: f64,
        m: f64,
        x_star: f64,
        sigma_min: f64,
        sigma_max: f64,
    ) -> Result<Self> {
        if !(l > 1.0) {
            return Err(Error::invalid(format!("class constant L must be > 1, got {l}")));
        }
        if !(m > 0.0) {
            return Err(Error::invalid(format!("class constant M must be > 0, got {m}")));
        }
        if !(x_star >= 1.0) {
            return Err(Error::invalid(format!("x_star must be ≥ 1, got {x_star}")));
        }
        if !(sigma_min > 0.0) || !(sigma_max >= sigma_min) {
            return Err(Error::invalid(format!(
                "diffusion bounds must satisfy 0 < sigma_min ≤ sigma_max, got [{sigma_min}, {sigma_max}]"
            )));
        }
        Ok(ModelTheta {
            id: id.into(),
            drift,
            drift_derivative,
            diffusion,
            l,
            m,
            x_star,
            sigma_min,
            sigma_max,
            sampler: SamplerKind::EulerMaruyama,
        })
    }

    /// Parse a model spec string: `"<drift_id>"` or `"<drift_id>+<diffusion_id>"`.
    ///
    /// See the module docs for the catalog. A bare drift implies
    /// `const_sigma(1)`.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidArgument`] on unknown ids, malformed parameter lists,
    /// or parameters outside their stated ranges.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (drift_part, sigma_part) = match spec.split_once('+') {
            Some((d, s)) => (d.trim(), s.trim()),
            None => (spec, "const_sigma(1)"),
        };
        let drift = DriftSpec::parse(drift_part)?;
        let sigma = SigmaSpec::parse(sigma_part)?;
        Ok(build_model(drift, sigma))
    }

    /// Verify the declared class constants on a uniform grid.
    ///
    /// Checks, at `points` uniformly spaced abscissas on
    /// [−3x*, 3x*] (the default sampling window; 4096 points unless
    /// overridden):
    ///
    /// - σ_min ≤ |σ(x)| ≤ σ_max everywhere,
    /// - |S(x)| + |Ṡ(x)| ≤ M for |x| ≤ x*,
    /// - −L ≤ Ṡ(x) ≤ −1/L for |x| ≥ x*.
    ///
    /// A relative slack of 1e−9 absorbs rounding in the comparisons. Returns
    /// the first violation found as [`Error::ModelViolation`].
    pub fn check_class_membership(&self, points: usize) -> Result<()> {
        let n = points.max(2);
        let lo = -3.0 * self.x_star;
        let hi = 3.0 * self.x_star;
        let slack = 1e-9;
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let s = self.drift(x);
            let sd = self.drift_deriv(x);
            let sig = self.diffusion(x).abs();
            if !s.is_finite() || !sd.is_finite() || !sig.is_finite() {
                return Err(Error::Evaluation(format!(
                    "model {} produced a non-finite value at x = {x}",
                    self.id
                )));
            }
            if sig < self.sigma_min * (1.0 - slack) || sig > self.sigma_max * (1.0 + slack) {
                return Err(Error::ModelViolation(format!(
                    "|σ({x})| = {sig} outside [{}, {}] for model {}",
                    self.sigma_min, self.sigma_max, self.id
                )));
            }
            if x.abs() <= self.x_star {
                if s.abs() + sd.abs() > self.m * (1.0 + slack) {
                    return Err(Error::ModelViolation(format!(
                        "|S({x})| + |Ṡ({x})| = {} exceeds M = {} for model {}",
                        s.abs() + sd.abs(),
                        self.m,
                        self.id
                    )));
                }
            }
            if x.abs() >= self.x_star {
                let lo_d = -self.l * (1.0 + slack);
                let hi_d = -1.0 / self.l * (1.0 - slack);
                if sd < lo_d || sd > hi_d {
                    return Err(Error::ModelViolation(format!(
                        "Ṡ({x}) = {sd} outside [−L, −1/L] = [{}, {}] for model {}",
                        -self.l,
                        -1.0 / self.l,
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parsed drift half of a model spec.
enum DriftSpec {
    Ou { theta: f64 },
    Tanh { a: f64, b: f64 },
}

/// Parsed diffusion half of a model spec.
enum SigmaSpec {
    Const { s: f64 },
    Smooth { s0: f64, s1: f64 },
}

/// Split `"name(p1,p2,…)"` into the name and its numeric parameters.
fn parse_call(spec: &str) -> Result<(&str, Vec<f64>)> {
    let open = spec
        .find('(')
        .ok_or_else(|| Error::invalid(format!("expected 'name(args)' in model spec, got '{spec}'")))?;
    if !spec.ends_with(')') {
        return Err(Error::invalid(format!("unbalanced parentheses in model spec '{spec}'")));
    }
    let name = &spec[..open];
    let args = &spec[open + 1..spec.len() - 1];
    let params = args
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::invalid(format!("non-numeric parameter '{s}' in model spec '{spec}'")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((name, params))
}

fn expect_params(spec: &str, params: &[f64], n: usize) -> Result<()> {
    if params.len() != n {
        return Err(Error::invalid(format!(
            "model spec '{spec}' expects {n} parameter(s), got {}",
            params.len()
        )));
    }
    Ok(())
}

impl DriftSpec {
    fn parse(spec: &str) -> Result<Self> {
        let (name, p) = parse_call(spec)?;
        match name {
            "ou" => {
                expect_params(spec, &p, 1)?;
                if !(p[0] > 0.0) {
                    return Err(Error::invalid(format!("ou(theta) requires theta > 0, got {}", p[0])));
                }
                Ok(DriftSpec::Ou { theta: p[0] })
            }
            "tanh_drift" => {
                expect_params(spec, &p, 2)?;
                if !(p[0] > 0.0) || !(p[1] > 0.0) {
                    return Err(Error::invalid(format!(
                        "tanh_drift(a,b) requires a > 0 and b > 0, got ({}, {})",
                        p[0], p[1]
                    )));
                }
                Ok(DriftSpec::Tanh { a: p[0], b: p[1] })
            }
            other => Err(Error::invalid(format!("unknown drift id '{other}'"))),
        }
    }
}

impl SigmaSpec {
    fn parse(spec: &str) -> Result<Self> {
        let (name, p) = parse_call(spec)?;
        match name {
            "const_sigma" => {
                expect_params(spec, &p, 1)?;
                if !(p[0] > 0.0) {
                    return Err(Error::invalid(format!("const_sigma(s) requires s > 0, got {}", p[0])));
                }
                Ok(SigmaSpec::Const { s: p[0] })
            }
            "smooth_sigma" => {
                expect_params(spec, &p, 2)?;
                if !(p[0] > 0.0) || !(p[1] >= 0.0) {
                    return Err(Error::invalid(format!(
                        "smooth_sigma(s0,s1) requires s0 > 0 and s1 ≥ 0, got ({}, {})",
                        p[0], p[1]
                    )));
                }
                Ok(SigmaSpec::Smooth { s0: p[0], s1: p[1] })
            }
            other => Err(Error::invalid(format!("unknown diffusion id '{other}'"))),
        }
    }
}

/// Assemble a catalog model from parsed drift and diffusion halves.
///
/// Class constants are the tight analytic bounds for each combination:
///
/// - `ou(θ)`: Ṡ ≡ −θ, so L = 2·max(θ, 1/θ); sup_{|x|≤x*}(|S| + |Ṡ|) = θ(x* + 1).
/// - `tanh_drift(a,b)`: Ṡ(x) = −1 − ab·sech²(bx) ∈ [−(1 + ab), −1], so
///   L = 2(1 + ab) keeps Ṡ inside [−L, −1/L] with slack; the central bound
///   is M = x* + a + 1 + ab.
/// - `smooth_sigma(s0,s1)`: σ ∈ [s0, s0 + s1]; sup|σ̈| = 2s1 (attained at 0),
///   so σ_max = max(s0 + s1, 2s1) also covers the derivative bounds the
///   diffusion class asks for.
fn build_model(drift: DriftSpec, sigma: SigmaSpec) -> ModelTheta {
    let x_star = 1.0;
    let (sigma_fn, sigma_min, sigma_max, sigma_id, const_sigma): (ScalarFn, f64, f64, String, Option<f64>) =
        match sigma {
            SigmaSpec::Const { s } => (Arc::new(move |_| s), s, s, format!("const_sigma({s})"), Some(s)),
            SigmaSpec::Smooth { s0, s1 } => (
                Arc::new(move |x| s0 + s1 / (1.0 + x * x)),
                s0,
                (s0 + s1).max(2.0 * s1),
                format!("smooth_sigma({s0},{s1})"),
                None,
            ),
        };

    match drift {
        DriftSpec::Ou { theta } => {
            let sampler = match const_sigma {
                Some(s) => SamplerKind::ExactOrnsteinUhlenbeck { theta, sigma: s },
                None => SamplerKind::EulerMaruyama,
            };
            ModelTheta {
                id: format!("ou({theta})+{sigma_id}"),
                drift: Arc::new(move |x| -theta * x),
                drift_derivative: Arc::new(move |_| -theta),
                diffusion: sigma_fn,
                l: 2.0 * theta.max(1.0 / theta),
                m: theta * (x_star + 1.0),
                x_star,
                sigma_min,
                sigma_max,
                sampler,
            }
        }
        DriftSpec::Tanh { a, b } => ModelTheta {
            id: format!("tanh_drift({a},{b})+{sigma_id}"),
            drift: Arc::new(move |x| -x - a * (b * x).tanh()),
            drift_derivative: Arc::new(move |x| {
                let c = (b * x).cosh();
                -1.0 - a * b / (c * c)
            }),
            diffusion: sigma_fn,
            l: 2.0 * (1.0 + a * b),
            m: x_star + a + 1.0 + a * b,
            x_star,
            sigma_min,
            sigma_max,
            sampler: SamplerKind::EulerMaruyama,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn parse_catalog_ids() {
        let m = ModelTheta::parse("ou(1.0)").unwrap();
        assert_eq!(m.sampler, SamplerKind::ExactOrnsteinUhlenbeck { theta: 1.0, sigma: 1.0 });
        assert_abs_diff_eq!(m.drift(2.0), -2.0);
        assert_abs_diff_eq!(m.diffusion(5.0), 1.0);

        let m = ModelTheta::parse("tanh_drift(0.5, 2) + smooth_sigma(0.8, 0.4)").unwrap();
        assert_eq!(m.sampler, SamplerKind::EulerMaruyama);
        assert_abs_diff_eq!(m.drift(0.0), 0.0);
        assert_abs_diff_eq!(m.diffusion(0.0), 1.2);
        assert_abs_diff_eq!(m.diffusion(1.0), 1.0);

        // An OU drift with non-constant diffusion loses the exact sampler.
        let m = ModelTheta::parse("ou(2)+smooth_sigma(1,0.5)").unwrap();
        assert_eq!(m.sampler, SamplerKind::EulerMaruyama);
    }

    #[test]
    fn parse_rejects_malformed_specs() {
        assert!(ModelTheta::parse("ou").is_err());
        assert!(ModelTheta::parse("ou(0)").is_err());
        assert!(ModelTheta::parse("ou(-1)").is_err());
        assert!(ModelTheta::parse("ou(1,2)").is_err());
        assert!(ModelTheta::parse("langevin(1)").is_err());
        assert!(ModelTheta::parse("ou(1)+const_sigma(0)").is_err());
        assert!(ModelTheta::parse("ou(x)").is_err());
    }

    #[test]
    fn catalog_models_pass_their_own_class_check() {
        for spec in [
            "ou(1)",
            "ou(0.5)",
            "ou(2)+const_sigma(0.7)",
            "tanh_drift(0.5,1)",
            "tanh_drift(1,0.5)+smooth_sigma(0.9,0.3)",
            "ou(1)+smooth_sigma(1,1)",
        ] {
            let m = ModelTheta::parse(spec).unwrap();
            m.check_class_membership(4096)
                .unwrap_or_else(|e| panic!("{spec}: {e}"));
        }
    }

    #[test]
    fn class_check_catches_violations() {
        // Drift with positive derivative beyond x* (not mean-reverting).
        let m = ModelTheta::custom(
            "bad",
            Arc::new(|x| x),
            Arc::new(|_| 1.0),
            Arc::new(|_| 1.0),
            2.0,
            2.0,
            1.0,
            1.0,
            1.0,
        )
        .unwrap();
        assert!(matches!(m.check_class_membership(128), Err(Error::ModelViolation(_))));

        // Diffusion dipping below its declared sigma_min.
        let m = ModelTheta::custom(
            "bad-sigma",
            Arc::new(|x| -x),
            Arc::new(|_| -1.0),
            Arc::new(|x: f64| 0.5 + x.abs().min(1.0)),
            2.0,
            2.0,
            1.0,
            1.0,
            1.5,
        )
        .unwrap();
        assert!(matches!(m.check_class_membership(128), Err(Error::ModelViolation(_))));
    }

    #[test]
    fn custom_rejects_bad_constants() {
        let f: ScalarFn = Arc::new(|x| -x);
        let d: ScalarFn = Arc::new(|_| -1.0);
        let s: ScalarFn = Arc::new(|_| 1.0);
        assert!(ModelTheta::custom("m", f.clone(), d.clone(), s.clone(), 1.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(ModelTheta::custom("m", f.clone(), d.clone(), s.clone(), 2.0, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(ModelTheta::custom("m", f.clone(), d.clone(), s.clone(), 2.0, 1.0, 0.5, 1.0, 1.0).is_err());
        assert!(ModelTheta::custom("m", f, d, s, 2.0, 1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn tanh_drift_derivative_is_consistent() {
        let m = ModelTheta::parse("tanh_drift(0.7,1.3)").unwrap();
        let h = 1e-6;
        for &x in &[-2.0, -0.5, 0.0, 0.3, 1.7] {
            let fd = (m.drift(x + h) - m.drift(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(m.drift_deriv(x), fd, epsilon = 1e-8);
        }
    }
}
