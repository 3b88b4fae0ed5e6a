//! Function classes: the averaged smoothness modulus, membership checks,
//! and the modulus-neutral perturbation family used as a test fixture.
//!
//! # The averaged modulus
//!
//! For a drift S, a point x₀ and a bandwidth h > 0,
//!
//! ```text
//! Ω_{x0,h}(S) = ∫_{−1}^{1} (S(x0 + hz) − S(x0)) dz .
//! ```
//!
//! The weak Hölder condition with exponent β ∈ (1,2) and norm ε requires
//! |Ω_{x0,h}(S)| ≤ ε·h^β. This is weaker than pointwise Hölder smoothness:
//! only the *window average* of the increment must be small, so functions
//! with sizable antisymmetric wiggles still qualify. Any linear S has
//! modulus 0 exactly; S(x) = c(x − x0)² has modulus 2ch²/3.
//!
//! # The perturbation family
//!
//! The hardest local alternatives for estimating S(x0) take the form
//!
//! ```text
//! S_{u,ν}(x) = S₀(x) + (u/φ_T)·V_ν((x − x0)/h),   ν ∈ (0, 1/4),
//! ```
//!
//! where V_ν mollifies a ±-weighted plateau kernel with a C¹ probability
//! density g on [−1,1]:
//!
//! ```text
//! V_ν(x) = (1/ν) ∫ K(u) g((u − x)/ν) du ,
//! K(u)   = 1 on |u| ≤ 1−2ν,  2 on 1−2ν < |u| ≤ 1−ν,  0 beyond.
//! ```
//!
//! The outer double-weighted shell makes the construction modulus-neutral:
//! V_ν(0) = 1 and ∫_{−1}^{1} V_ν = 2, hence Ω_{x0,h}(S_{u,ν} − S₀) = 0 for
//! every amplitude u — the perturbation moves the value at x₀ without
//! moving the window average, which is what makes these alternatives sharp.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::ScalarFn;
use crate::quad::{adaptive_simpson, adaptive_simpson_split, DEFAULT_QUAD_TOL};

/// Parameters of the weak Hölder condition at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HolderParams {
    /// Estimation point x₀.
    pub x0: f64,
    /// Bandwidth h > 0.
    pub h: f64,
    /// Smoothness exponent β ∈ (1, 2).
    pub beta: f64,
    /// Class norm ε > 0.
    pub epsilon: f64,
}

impl HolderParams {
    /// Validated constructor.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidArgument`] if h ≤ 0, β ∉ (1,2), or ε ≤ 0.
    pub fn new(x0: f64, h: f64, beta: f64, epsilon: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::invalid(format!("bandwidth h must be > 0, got {h}")));
        }
        if !(beta > 1.0 && beta < 2.0) {
            return Err(Error::invalid(format!("beta must lie in (1,2), got {beta}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
        }
        Ok(HolderParams { x0, h, beta, epsilon })
    }

    /// The class bound ε·h^β the modulus is compared against.
    pub fn bound(&self) -> f64 {
        self.epsilon * self.h.powf(self.beta)
    }
}

/// Outcome of a membership check: the verdict plus the measured quantities
/// backing it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MembershipWitness {
    /// Whether |modulus| ≤ bound.
    pub is_member: bool,
    /// The measured modulus Ω_{x0,h}(S).
    pub modulus: f64,
    /// The bound ε·h^β it was compared against.
    pub bound: f64,
}

/// Averaged smoothness modulus Ω_{x0,h}(S) = ∫_{−1}^{1}(S(x0+hz) − S(x0))dz.
///
/// Evaluated by adaptive quadrature to absolute tolerance `quad_tol`.
///
/// # Errors
///
/// [`Error::Evaluation`] if S returns a non-finite value inside the window;
/// [`Error::InvalidArgument`] for h ≤ 0 or quad_tol ≤ 0.
pub fn omega_modulus(s: impl Fn(f64) -> f64, x0: f64, h: f64, quad_tol: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("bandwidth h must be > 0, got {h}")));
    }
    let center = s(x0);
    if !center.is_finite() {
        return Err(Error::Evaluation(format!("S(x0) is not finite at x0 = {x0}")));
    }
    adaptive_simpson(|z| s(x0 + h * z) - center, -1.0, 1.0, quad_tol)
}

/// Check the weak Hölder condition |Ω_{x0,h}(S)| ≤ ε·h^β, returning the
/// measured modulus as witness.
///
/// # Errors
///
/// Propagates evaluation failures from [`omega_modulus`].
pub fn weak_holder_membership(
    s: impl Fn(f64) -> f64,
    params: &HolderParams,
    quad_tol: f64,
) -> Result<MembershipWitness> {
    let modulus = omega_modulus(s, params.x0, params.h, quad_tol)?;
    let bound = params.bound();
    Ok(MembershipWitness { is_member: modulus.abs() <= bound, modulus, bound })
}

/// The C¹ bump density g(x) = (15/16)(1 − x²)² on [−1,1], 0 outside.
///
/// g and g′ vanish at ±1, so the extension by zero is continuously
/// differentiable on all of ℝ; ∫_{−1}^{1} g = 1 exactly.
pub fn default_bump_density() -> ScalarFn {
    Arc::new(|x: f64| {
        if x.abs() >= 1.0 {
            0.0
        } else {
            let w = 1.0 - x * x;
            15.0 / 16.0 * w * w
        }
    })
}

/// A modulus-neutral local perturbation of a reference drift (see module
/// docs for the construction).
#[derive(Clone)]
pub struct PerturbationFamily {
    /// Mollifier density g: C¹ probability density supported on [−1,1].
    pub base_density: ScalarFn,
    /// Mollification width ν ∈ (0, 1/4).
    pub nu: f64,
    /// Perturbation amplitude u (the local value shift is u/φ_T).
    pub u: f64,
    /// Bandwidth h > 0 of the perturbation window.
    pub h: f64,
    /// Center x₀.
    pub x0: f64,
    /// Normalizer φ_T > 0 (typically the minimax rate).
    pub phi_t: f64,
    /// Quadrature tolerance for V_ν evaluations.
    quad_tol: f64,
}

impl std::fmt::Debug for PerturbationFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbationFamily")
            .field("nu", &self.nu)
            .field("u", &self.u)
            .field("h", &self.h)
            .field("x0", &self.x0)
            .field("phi_t", &self.phi_t)
            .finish_non_exhaustive()
    }
}

impl PerturbationFamily {
    /// Family with the default bump density g(x) = (15/16)(1 − x²)².
    ///
    /// # Errors
    ///
    /// [`Error::InvalidArgument`] if ν ∉ (0, 1/4), h ≤ 0, or φ_T ≤ 0.
    pub fn new(nu: f64, u: f64, h: f64, x0: f64, phi_t: f64) -> Result<Self> {
        Self::with_density(default_bump_density(), nu, u, h, x0, phi_t)
    }

    /// Family with a caller-supplied mollifier density.
    ///
    /// The density is validated by quadrature: ∫_{−1}^{1} g must equal 1
    /// within 1e−6.
    ///
    /// # Errors
    ///
    /// [`Error::InvalidArgument`] for out-of-range parameters or a density
    /// that does not integrate to 1.
    pub fn with_density(
        base_density: ScalarFn,
        nu: f64,
        u: f64,
        h: f64,
        x0: f64,
        phi_t: f64,
    ) -> Result<Self> {
        if !(nu > 0.0 && nu < 0.25) {
            return Err(Error::invalid(format!("nu must lie in (0, 1/4), got {nu}")));
        }
        if !(h > 0.0) {
            return Err(Error::invalid(format!("bandwidth h must be > 0, got {h}")));
        }
        if !(phi_t > 0.0) {
            return Err(Error::invalid(format!("normalizer phi_T must be > 0, got {phi_t}")));
        }
        let mass = adaptive_simpson(|x| base_density(x), -1.0, 1.0, 1e-9)?;
        if (mass - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "base density must integrate to 1 over [−1,1]; quadrature gives {mass}"
            )));
        }
        Ok(PerturbationFamily { base_density, nu, u, h, x0, phi_t, quad_tol: 0.01 * DEFAULT_QUAD_TOL })
    }

    /// Evaluate the mollified kernel V_ν(x) by quadrature of the
    /// convolution formula (substituted to the mollifier variable):
    ///
    /// ```text
    /// V_ν(x) = ∫_{−1}^{1} K(x + νw) g(w) dw .
    /// ```
    ///
    /// The plateau kernel K is piecewise constant, so the integrand has
    /// jump points where x + νw crosses ±(1−2ν) and ±(1−ν); those are
    /// passed to the quadrature as panel breakpoints.
    ///
    /// # Errors
    ///
    /// [`Error::Evaluation`] if g produces non-finite values.
    pub fn v_nu(&self, x: f64) -> Result<f64> {
        let nu = self.nu;
        let plateau = move |z: f64| {
            let a = z.abs();
            if a <= 1.0 - 2.0 * nu {
                1.0
            } else if a <= 1.0 - nu {
                2.0
            } else {
                0.0
            }
        };
        // Support of V_ν is [−1, 1]: outside, x + νw stays beyond 1 − ν.
        if x.abs() >= 1.0 {
            return Ok(0.0);
        }
        let g = &self.base_density;
        let mut breaks = Vec::with_capacity(4);
        for edge in [1.0 - 2.0 * nu, 1.0 - nu] {
            for signed in [edge, -edge] {
                breaks.push((signed - x) / nu);
            }
        }
        adaptive_simpson_split(|w| plateau(x + nu * w) * g(w), -1.0, 1.0, &breaks, self.quad_tol)
    }

    /// The additive perturbation D_u(x) = (u/φ_T)·V_ν((x − x0)/h).
    ///
    /// Exactly 0 when u = 0 (no quadrature noise at zero amplitude).
    ///
    /// # Errors
    ///
    /// Propagates [`Self::v_nu`] failures.
    pub fn bump(&self, x: f64) -> Result<f64> {
        if self.u == 0.0 {
            return Ok(0.0);
        }
        Ok(self.u / self.phi_t * self.v_nu((x - self.x0) / self.h)?)
    }
}

/// Build the perturbed drift S_{u,ν} = S₀ + D_u as a shareable function.
///
/// # Panics
///
/// The returned closure panics if the mollifier density produces a
/// non-finite value during the V_ν quadrature (impossible for the built-in
/// density).
pub fn build_perturbation(fam: &PerturbationFamily, s0: ScalarFn) -> ScalarFn {
    let fam = fam.clone();
    Arc::new(move |x| {
        let bump = fam
            .bump(x)
            .unwrap_or_else(|e| panic!("perturbation evaluation failed at x = {x}: {e}"));
        s0(x) + bump
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn modulus_of_linear_drift_vanishes() {
        for (a, b) in [(0.0, 1.0), (2.5, -3.0), (-1.0, 0.25)] {
            for (x0, h) in [(0.0, 0.3), (1.7, 0.05), (-2.0, 1.0)] {
                let m = omega_modulus(|x| a + b * x, x0, h, DEFAULT_QUAD_TOL).unwrap();
                assert!(m.abs() < 1e-10, "a={a} b={b} x0={x0} h={h}: modulus {m}");
            }
        }
    }

    #[test]
    fn modulus_of_quadratic_is_two_thirds_h_squared() {
        let m = omega_modulus(|x| x * x, 0.0, 0.3, DEFAULT_QUAD_TOL).unwrap();
        assert_abs_diff_eq!(m, 0.06, epsilon = 1e-8);

        // Scale law across a bandwidth grid: c(x − x0)² → 2ch²/3.
        let (c, x0) = (1.7, -0.4);
        for &h in &[0.05, 0.1, 0.2, 0.4, 0.8] {
            let m = omega_modulus(|x| c * (x - x0) * (x - x0), x0, h, DEFAULT_QUAD_TOL).unwrap();
            assert_abs_diff_eq!(m, 2.0 * c * h * h / 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn membership_verdicts_match_analytic_moduli() {
        let params = HolderParams::new(0.0, 0.3, 1.5, 0.1).unwrap();
        let lin = weak_holder_membership(|x| 3.0 - 2.0 * x, &params, DEFAULT_QUAD_TOL).unwrap();
        assert!(lin.is_member);
        assert!(lin.modulus.abs() < 1e-10);

        // Quadratic: modulus 0.06 > 0.1·0.3^{1.5} ≈ 0.0164 → not a member.
        let quad = weak_holder_membership(|x| x * x, &params, DEFAULT_QUAD_TOL).unwrap();
        assert!(!quad.is_member);
        assert_abs_diff_eq!(quad.modulus, 0.06, epsilon = 1e-8);
        assert_abs_diff_eq!(quad.bound, 0.1 * 0.3f64.powf(1.5), epsilon = 1e-12);
    }

    #[test]
    fn holder_params_validate_ranges() {
        assert!(HolderParams::new(0.0, 0.0, 1.5, 0.1).is_err());
        assert!(HolderParams::new(0.0, 0.1, 1.0, 0.1).is_err());
        assert!(HolderParams::new(0.0, 0.1, 2.0, 0.1).is_err());
        assert!(HolderParams::new(0.0, 0.1, 1.5, 0.0).is_err());
    }

    #[test]
    fn v_nu_normalizations() {
        for &nu in &[0.05, 0.2] {
            let fam = PerturbationFamily::new(nu, 1.0, 0.3, 0.0, 1.0).unwrap();
            assert_abs_diff_eq!(fam.v_nu(0.0).unwrap(), 1.0, epsilon = 1e-6);
            let total = adaptive_simpson(|x| fam.v_nu(x).unwrap(), -1.0, 1.0, 1e-8).unwrap();
            assert_abs_diff_eq!(total, 2.0, epsilon = 1e-6);
            // Support: vanishes at and beyond the window edge.
            assert_eq!(fam.v_nu(1.0).unwrap(), 0.0);
            assert_eq!(fam.v_nu(-1.2).unwrap(), 0.0);
            // Interior oracle: at x = 1 − ν/2 only the double-weighted
            // shell contributes, over w ∈ [−1, −1/2], giving exactly
            // 2∫_{−1}^{−1/2} (15/16)(1−w²)² dw = 53/256 = 0.20703125.
            assert_abs_diff_eq!(fam.v_nu(1.0 - 0.5 * nu).unwrap(), 0.207_031_25, epsilon = 1e-9);
        }
    }

    #[test]
    fn perturbation_is_modulus_neutral() {
        let s0: ScalarFn = Arc::new(|x| -x);
        for &nu in &[0.05, 0.2] {
            for &u in &[-1.0, 0.0, 1.0] {
                let fam = PerturbationFamily::new(nu, u, 0.3, 0.5, 1.0).unwrap();
                let s = build_perturbation(&fam, s0.clone());
                let m = omega_modulus(|x| s(x), fam.x0, fam.h, 1e-8).unwrap();
                assert!(m.abs() < 1e-6, "nu={nu} u={u}: modulus {m}");
                let witness = weak_holder_membership(
                    |x| s(x),
                    &HolderParams::new(fam.x0, fam.h, 1.5, 0.05).unwrap(),
                    1e-8,
                )
                .unwrap();
                assert!(witness.is_member, "nu={nu} u={u}");
            }
        }
    }

    #[test]
    fn zero_amplitude_reproduces_base_drift_exactly() {
        let s0: ScalarFn = Arc::new(|x: f64| -1.3 * x + 0.2 * x.sin());
        let fam = PerturbationFamily::new(0.1, 0.0, 0.25, 0.0, 10.0).unwrap();
        let s = build_perturbation(&fam, s0.clone());
        for &x in &[-1.0, -0.2, 0.0, 0.1, 0.9] {
            assert_eq!(s(x), s0(x));
        }
    }

    #[test]
    fn family_validates_parameters_and_density() {
        assert!(PerturbationFamily::new(0.0, 1.0, 0.3, 0.0, 1.0).is_err());
        assert!(PerturbationFamily::new(0.25, 1.0, 0.3, 0.0, 1.0).is_err());
        assert!(PerturbationFamily::new(0.1, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(PerturbationFamily::new(0.1, 1.0, 0.3, 0.0, 0.0).is_err());
        // A density with the wrong mass is rejected.
        let bad: ScalarFn = Arc::new(|_| 0.75);
        assert!(PerturbationFamily::with_density(bad, 0.1, 1.0, 0.3, 0.0, 1.0).is_err());
    }

    #[test]
    fn modulus_rejects_non_finite_drift() {
        let res = omega_modulus(|x| 1.0 / x, 0.0, 0.5, DEFAULT_QUAD_TOL);
        assert!(res.is_err());
    }

    proptest! {
        /// Linearity: Ω(aS₁ + bS₂) = aΩ(S₁) + bΩ(S₂) within the composed
        /// quadrature budget (each of the three evaluations contributes up
        /// to quad_tol scaled by its coefficient; |a|, |b| ≤ 1/2 keeps the
        /// total within 2·quad_tol).
        #[test]
        fn modulus_is_linear(
            a in -0.5f64..0.5,
            b in -0.5f64..0.5,
            c1 in -1.0f64..1.0,
            c2 in -1.0f64..1.0,
            c3 in -1.0f64..1.0,
            x0 in -1.0f64..1.0,
            h in 0.05f64..0.8,
        ) {
            let s1 = move |x: f64| c1 * x * x + c2 * x;
            let s2 = move |x: f64| c3 * x * x * x - x;
            let tol = DEFAULT_QUAD_TOL;
            let lhs = omega_modulus(|x| a * s1(x) + b * s2(x), x0, h, tol).unwrap();
            let rhs = a * omega_modulus(s1, x0, h, tol).unwrap()
                + b * omega_modulus(s2, x0, h, tol).unwrap();
            prop_assert!((lhs - rhs).abs() <= 2.0 * tol, "lhs={lhs} rhs={rhs}");
        }
    }
}
