//! One-dimensional quadrature for smooth integrands on compact intervals.
//!
//! Two rules cover every need in this crate:
//!
//! - [`adaptive_simpson`] — tolerance-driven adaptive Simpson with Richardson
//!   extrapolation, for black-box smooth integrands (moduli of drift
//!   functions, invariant-density normalizers, ergodic means).
//! - [`gauss_legendre_7`] — a fixed 7-point Gauss–Legendre panel, exact for
//!   polynomials up to degree 13, used where the integrand is smooth on a
//!   short panel and thousands of panels are accumulated (the cached
//!   integrated drift grid) or where near-exactness on polynomial pieces
//!   matters (the perturbation-kernel convolution).
//!
//! Integrands with known kink or jump locations should be integrated
//! piecewise between the breakpoints; [`adaptive_simpson_split`] does the
//! bookkeeping.

use crate::error::{Error, Result};

/// Default absolute tolerance for adaptive quadrature.
///
/// All integrands in this crate are C¹-smooth between declared breakpoints
/// and have O(1) magnitude, so 1e−9 absolute leaves two orders of margin
/// below the tightest 1e−8 comparison made against quadrature output while
/// converging in few subdivisions.
pub const DEFAULT_QUAD_TOL: f64 = 1e-9;

/// Hard recursion-depth cap for adaptive Simpson.
///
/// Depth 48 corresponds to intervals of width `(b−a)·2⁻⁴⁸`, far below any
/// feature size of a smooth integrand; hitting the cap signals an integrand
/// that is not smooth on the interval (and the error term is still
/// controlled by the tolerance accounting, just no longer guaranteed).
const MAX_DEPTH: u32 = 48;

/// Abscissas of the 7-point Gauss–Legendre rule on [−1, 1].
const GL7_NODES: [f64; 7] = [
    -0.949_107_912_342_758_5,
    -0.741_531_185_599_394_4,
    -0.405_845_151_377_397_17,
    0.0,
    0.405_845_151_377_397_17,
    0.741_531_185_599_394_4,
    0.949_107_912_342_758_5,
];

/// Weights of the 7-point Gauss–Legendre rule on [−1, 1].
const GL7_WEIGHTS: [f64; 7] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
    0.381_830_050_505_118_94,
    0.279_705_391_489_276_7,
    0.129_484_966_168_869_7,
];

/// Integrate `f` over `[a, b]` with the fixed 7-point Gauss–Legendre rule.
///
/// Exact (to rounding) for polynomials of degree ≤ 13; error O((b−a)¹⁵) for
/// analytic integrands, so short panels are effectively exact.
pub fn gauss_legendre_7(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (&x, &w) in GL7_NODES.iter().zip(GL7_WEIGHTS.iter()) {
        acc += w * f(mid + half * x);
    }
    half * acc
}

/// Integrate `f` over `[a, b]` by adaptive Simpson to absolute tolerance `tol`.
///
/// Uses the classic interval-halving scheme with the 1/15 Richardson error
/// estimate and correction. Returns an error if the integrand produces a
/// non-finite value anywhere it is evaluated, or if `tol` is nonpositive.
///
/// `a > b` is allowed and yields the signed integral.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("quadrature tolerance must be > 0, got {tol}")));
    }
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };

    let eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation(format!("integrand returned {v} at x = {x}")))
        }
    };

    let m = 0.5 * (lo + hi);
    let fa = eval(lo)?;
    let fm = eval(m)?;
    let fb = eval(hi)?;
    let whole = (hi - lo) * (fa + 4.0 * fm + fb) / 6.0;
    let v = simpson_rec(&eval, lo, hi, fa, fm, fb, whole, tol, MAX_DEPTH)?;
    Ok(sign * v)
}

/// Recursive worker for [`adaptive_simpson`].
///
/// `whole` is the Simpson estimate over `[a, b]` with midpoint values
/// already computed; the two half-interval estimates refine it and the
/// difference drives both acceptance and the Richardson correction.
#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    eval: &impl Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = eval(lm)?;
    let frm = eval(rm)?;
    let left = (m - a) * (fa + 4.0 * flm + fm) / 6.0;
    let right = (b - m) * (fm + 4.0 * frm + fb) / 6.0;
    let refined = left + right;
    let err = refined - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        // Richardson extrapolation cancels the leading error term.
        return Ok(refined + err / 15.0);
    }
    let half_tol = 0.5 * tol;
    Ok(simpson_rec(eval, a, m, fa, flm, fm, left, half_tol, depth - 1)?
        + simpson_rec(eval, m, b, fm, frm, fb, right, half_tol, depth - 1)?)
}

/// Integrate `f` over `[a, b]`, splitting at the given interior breakpoints.
///
/// Breakpoints outside `(a, b)` are ignored; the remaining ones are sorted
/// and each smooth piece is integrated by [`adaptive_simpson`] with the
/// tolerance divided across pieces. Use this for integrands with known
/// kinks or jumps (window indicators, piecewise kernels).
pub fn adaptive_simpson_split(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&x| x > lo && x < hi)
        .collect();
    cuts.sort_by(|p, q| p.partial_cmp(q).expect("breakpoints must not be NaN"));
    cuts.dedup();

    let pieces = cuts.len() + 1;
    let piece_tol = tol / pieces as f64;
    let mut start = lo;
    let mut total = 0.0;
    for &c in &cuts {
        total += adaptive_simpson(&f, start, c, piece_tol)?;
        start = c;
    }
    total += adaptive_simpson(&f, start, hi, piece_tol)?;
    Ok(sign * total)
}

/// Kahan–Neumaier compensated accumulator.
///
/// Long Monte Carlo and path reductions sum 10⁵–10⁸ terms; plain f64
/// accumulation loses up to √n·ε relative accuracy and, worse, makes the
/// result depend on summation order. All aggregations in this crate sum
/// through this accumulator in a fixed order so results are bit-stable.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    /// Fresh accumulator at 0.
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one term.
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        // Neumaier's variant: compensate whichever operand lost digits.
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Current compensated total.
    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}
