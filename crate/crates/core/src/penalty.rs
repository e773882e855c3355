//! Exponential penalty `k(s) = δ` for `s <= 0`, `k(s) = δ + e^{s/ε} - 1` for `s > 0`,
//! its primitives and the nodal operator `Φ(u) = k(|u|² - 1) u`.
//!
//! The exponential is capped at `e^700` so every value stays finite; the solvers
//! rely on finite residuals to recover from an overshooting iterate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent fed to `exp`; larger arguments saturate.
pub const EXP_CAP: f64 = 700.0;

/// The `(ε, δ, δ₀)` triple of the penalty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub delta0: f64,
}

impl PenaltyParams {
    pub fn new(epsilon: f64, delta: f64, delta0: f64) -> Result<Self> {
        let p = Self {
            epsilon,
            delta,
            delta0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.delta0 > 0.0 && self.delta0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta0 must be positive, got {}",
                self.delta0
            )));
        }
        if !(self.delta >= 0.0 && self.delta <= self.delta0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in [0, delta0 = {}], got {}",
                self.delta0, self.delta
            )));
        }
        Ok(())
    }
}

/// `e^x - 1` with the exponent capped at [`EXP_CAP`].
#[inline]
pub(crate) fn capped_expm1(x: f64) -> f64 {
    if x > EXP_CAP {
        log::trace!("penalty exponent {x:.3e} saturated at {EXP_CAP}");
        EXP_CAP.exp_m1()
    } else {
        x.exp_m1()
    }
}

/// Penalty function `k_{εδ}(s)`.
#[inline]
pub fn k_eval(s: f64, p: &PenaltyParams) -> f64 {
    if s <= 0.0 {
        p.delta
    } else {
        p.delta + capped_expm1(s / p.epsilon)
    }
}

/// Right derivative of `k_{εδ}`; zero on the flat branch.
#[inline]
pub fn k_derivative(s: f64, p: &PenaltyParams) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (capped_expm1(s / p.epsilon) + 1.0) / p.epsilon
    }
}

/// `Ψ(s) = ∫_0^s k(τ)^{power-1} dτ`.
///
/// Closed forms cover `s <= 0`, `power = 1` and `power = 2`; higher powers on the
/// exponential branch use adaptive Simpson quadrature at relative tolerance 1e-10.
pub fn psi_eval(s: f64, p: &PenaltyParams, power: u32) -> f64 {
    assert!(power >= 1, "psi power must be at least 1");
    if power == 1 {
        return s;
    }
    if s <= 0.0 {
        return p.delta.powi(power as i32 - 1) * s;
    }
    if power == 2 {
        return (p.delta - 1.0) * s + p.epsilon * capped_expm1(s / p.epsilon);
    }
    let integrand = |tau: f64| k_eval(tau, p).powi(power as i32 - 1);
    adaptive_simpson(&integrand, 0.0, s, 1e-10)
}

/// `Φ(u) = k(|u|² - 1) u` for one nodal vector.
pub fn phi_apply(u: &[f64], p: &PenaltyParams) -> Vec<f64> {
    let s = u.iter().map(|x| x * x).sum::<f64>() - 1.0;
    let k = k_eval(s, p);
    u.iter().map(|x| k * x).collect()
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // The integrand is positive, so a relative target is well posed.
    let tol = rel_tol * whole.abs().max(f64::MIN_POSITIVE);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
