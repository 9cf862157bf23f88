//! Proximal mapping of `λρ`.
//!
//! `prox_{λρ}(z) = argmin_t { λρ(t) + (t − z)²/2 }` solves
//! `g(t) = λρ'(t) + t − z = 0`. Since `0 ≤ ρ' ≤ 1`, the root always lies in
//! `[z − λ, z]`, which gives a bracket for free.

use crate::activation::ActivationFamily;
use crate::error::{Error, Result};

const MAX_ITER: usize = 200;
const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxResult {
    /// The minimizer `P`.
    pub value: f64,
    /// `∂P/∂z = 1 / (1 + λρ''(P))`.
    pub dp_dz: f64,
    /// `∂P/∂λ = −ρ'(P) / (1 + λρ''(P))`.
    pub dp_dlambda: f64,
    pub iterations: usize,
    /// `|λρ'(P) + P − z|` at the returned point.
    pub residual: f64,
}

/// Safeguarded Newton on `g(t) = λρ'(t) + t − z` with bisection fallback.
pub fn prox<F: ActivationFamily + ?Sized>(fam: &F, lambda: f64, z: f64) -> Result<ProxResult> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "prox requires lambda >= 0, got {lambda}"
        )));
    }
    if !z.is_finite() {
        return Err(Error::NonFinite { node: z });
    }
    if lambda == 0.0 {
        return Ok(ProxResult {
            value: z,
            dp_dz: 1.0,
            dp_dlambda: -fam.sigma(z),
            iterations: 0,
            residual: 0.0,
        });
    }

    let mut lo = z - lambda;
    let mut hi = z;
    // One explicit step from z is usually within a few ulps of the answer
    // when λ is small.
    let mut t = (z - lambda * fam.sigma(z)).clamp(lo, hi);
    let mut s = fam.sigma(t);
    let mut g = lambda * s + t - z;
    let floor = 4.0 * f64::EPSILON * (z.abs() + lambda);
    let mut iterations = 0;

    while iterations < MAX_ITER {
        if g.abs() <= floor {
            break;
        }
        iterations += 1;
        if g > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let slope = 1.0 + lambda * fam.sigma_prime(t);
        let newton = t - g / slope;
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == t {
            break;
        }
        t = next;
        s = fam.sigma(t);
        g = lambda * s + t - z;
        if hi - lo <= f64::EPSILON * t.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let residual = g.abs();
    if residual > RESIDUAL_TOL.max(floor) {
        return Err(Error::NoConvergence {
            what: "prox",
            iterations,
            residual,
        });
    }
    let denom = 1.0 + lambda * fam.sigma_prime(t);
    Ok(ProxResult {
        value: t,
        dp_dz: 1.0 / denom,
        dp_dlambda: -s / denom,
        iterations,
        residual,
    })
}
