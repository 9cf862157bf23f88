//! The three-equation system characterizing the unregularized ERM limit.
//!
//! In the original coordinates `(α, σ, λ)` the system reads
//!
//! ```text
//! σ²    = κ⁻² E[2ρ'(Q₁) λ² ρ'(P)²]
//! 0     = E[ρ'(Q₁) Q₁ λ ρ'(P)]
//! 1 − κ = E[2ρ'(Q₁) / (1 + λρ''(P))]
//! ```
//!
//! with `P = prox_{λρ}(Q₂)` and `Q₂ = −αQ₁ + √κ σ Z`. The solver works in the
//! rescaled coordinates `α = 1 + κᾱ`, `σ = σ̄`, `λ = κλ̄`, where the solution
//! path has a finite limit `p̄₀` as `κ → 0`, and continues from there along a
//! geometric ladder of aspect ratios.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationFamily;
use crate::asymptotics::expansion_coefficients;
use crate::error::{Error, Result};
use crate::prox::prox;
use crate::quadrature::{expect_1d, gauss_hermite, GaussHermiteRule, DEFAULT_ORDER};

/// Nodes whose weight falls below this contribute nothing at double precision.
const NEGLIGIBLE_WEIGHT: f64 = 1e-30;

/// Point in the κ-rescaled coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaledPoint {
    pub alpha_bar: f64,
    pub sigma_bar: f64,
    pub lambda_bar: f64,
}

impl RescaledPoint {
    pub fn new(alpha_bar: f64, sigma_bar: f64, lambda_bar: f64) -> Self {
        Self {
            alpha_bar,
            sigma_bar,
            lambda_bar,
        }
    }

    /// `(α, σ, λ) = (1 + κᾱ, σ̄, κλ̄)`.
    pub fn to_original(&self, kappa: f64) -> (f64, f64, f64) {
        (
            1.0 + kappa * self.alpha_bar,
            self.sigma_bar,
            kappa * self.lambda_bar,
        )
    }

    pub fn from_original(kappa: f64, alpha: f64, sigma: f64, lambda: f64) -> Self {
        Self {
            alpha_bar: (alpha - 1.0) / kappa,
            sigma_bar: sigma,
            lambda_bar: lambda / kappa,
        }
    }

    fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.alpha_bar, self.sigma_bar, self.lambda_bar)
    }

    fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Solver knobs. Defaults follow the documented tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub quad_order: usize,
    /// Target Euclidean norm of the rescaled residual.
    pub tol: f64,
    /// Newton iterations per ladder rung.
    pub max_iter: usize,
    /// The ladder starts at `min(kappa, ladder_start)`.
    pub ladder_start: f64,
    pub max_ladder_steps: usize,
    /// Relative step of the central-difference Jacobian.
    pub fd_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            quad_order: DEFAULT_ORDER,
            tol: 1e-10,
            max_iter: 50,
            ladder_start: 0.01,
            max_ladder_steps: 12,
            fd_step: 1e-6,
        }
    }
}

/// Fixed point of the system together with the derived concentration values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSolution {
    pub family: String,
    pub kappa: f64,
    pub gamma: f64,
    pub alpha_star: f64,
    pub sigma_star: f64,
    pub lambda_star: f64,
    /// Limit of `‖ŵ‖`.
    pub r_star: f64,
    /// Limit of `cos θ̂`.
    pub c_star: f64,
    pub rescaled: RescaledPoint,
    pub residual_norm: f64,
    /// Aspect ratios visited by the continuation, in order.
    pub solver_path: Vec<f64>,
    pub newton_iterations: usize,
    pub quad_order: usize,
}

impl LimitSolution {
    /// `γ c★ / R★`, the multiplier in front of `σ⁻¹(p)` in the limiting curve.
    pub fn slope(&self) -> f64 {
        let (a, s, k, g) = (self.alpha_star, self.sigma_star, self.kappa, self.gamma);
        1.0 / (a + k * s * s / (a * g * g))
    }

    /// `γ √(1 − c★²)`, the spread of the residual Gaussian.
    pub fn spread(&self) -> f64 {
        let (a, s, k, g) = (self.alpha_star, self.sigma_star, self.kappa, self.gamma);
        (k * s * s / (a * a + k * s * s / (g * g))).sqrt()
    }
}

/// `R★ = √(α²γ² + κσ²)` and `c★ = 1/√(1 + κσ²/(α²γ²))`.
pub fn concentration_values(kappa: f64, gamma: f64, alpha: f64, sigma: f64) -> (f64, f64) {
    let r = (alpha * alpha * gamma * gamma + kappa * sigma * sigma).sqrt();
    let c = 1.0 / (1.0 + kappa * sigma * sigma / (alpha * alpha * gamma * gamma)).sqrt();
    (r, c)
}

/// The three expectations `E[2ρ'(Q₁)ρ'(P)²]`, `E[ρ'(Q₁)Q₁ρ'(P)]` and
/// `E[2ρ'(Q₁)/(1 + λρ''(P))]`, computed in a single pass over the grid.
fn system_moments<F: ActivationFamily + ?Sized>(
    fam: &F,
    kappa: f64,
    gamma: f64,
    alpha: f64,
    sigma: f64,
    lambda: f64,
    rule: &GaussHermiteRule,
) -> Result<[f64; 3]> {
    let noise = kappa.sqrt() * sigma;
    let mut acc = [0.0; 3];
    for (x1, w1) in rule.iter() {
        if w1 < NEGLIGIBLE_WEIGHT {
            continue;
        }
        let q1 = gamma * x1;
        let s1 = fam.sigma(q1);
        let base = -alpha * q1;
        let mut inner = [0.0; 3];
        for (z, w2) in rule.iter() {
            if w2 < NEGLIGIBLE_WEIGHT {
                continue;
            }
            let q2 = base + noise * z;
            let p = prox(fam, lambda, q2)?.value;
            let sp = fam.sigma(p);
            let denom = 1.0 + lambda * fam.sigma_prime(p);
            inner[0] += w2 * sp * sp;
            inner[1] += w2 * sp;
            inner[2] += w2 / denom;
        }
        acc[0] += w1 * 2.0 * s1 * inner[0];
        acc[1] += w1 * s1 * q1 * inner[1];
        acc[2] += w1 * 2.0 * s1 * inner[2];
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { node: f64::NAN });
    }
    Ok(acc)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// `lhs − rhs` of the three equations in original coordinates.
pub fn residual_original<F: ActivationFamily + ?Sized>(
    fam: &F,
    kappa: f64,
    gamma: f64,
    alpha: f64,
    sigma: f64,
    lambda: f64,
    rule: &GaussHermiteRule,
) -> Result<[f64; 3]> {
    check_positive("kappa", kappa)?;
    check_positive("gamma", gamma)?;
    check_positive("sigma", sigma)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let [f1, f2, f3] = system_moments(fam, kappa, gamma, alpha, sigma, lambda, rule)?;
    Ok([
        sigma * sigma - lambda * lambda * f1 / (kappa * kappa),
        lambda * f2,
        (1.0 - kappa) - f3,
    ])
}

/// `(F₁, F₂, F₃)` in rescaled coordinates. Relates to [`residual_original`]
/// by `r₁ = F₁`, `r₂ = κ²λ̄ F₂`, `r₃ = κ F₃`.
pub fn residual_rescaled<F: ActivationFamily + ?Sized>(
    fam: &F,
    kappa: f64,
    gamma: f64,
    pbar: &RescaledPoint,
    rule: &GaussHermiteRule,
) -> Result<[f64; 3]> {
    check_positive("kappa", kappa)?;
    check_positive("gamma", gamma)?;
    check_positive("sigma_bar", pbar.sigma_bar)?;
    check_positive("lambda_bar", pbar.lambda_bar)?;
    let (alpha, sigma, lambda) = pbar.to_original(kappa);
    let [f1, f2, f3] = system_moments(fam, kappa, gamma, alpha, sigma, lambda, rule)?;
    Ok([
        pbar.sigma_bar * pbar.sigma_bar - pbar.lambda_bar * pbar.lambda_bar * f1,
        f2 / kappa,
        (1.0 - kappa - f3) / kappa,
    ])
}

/// κ → 0 limit of `∇_p̄ F`, evaluated with univariate quadrature against
/// `Q₁ ~ N(0, γ²)`. Rows are `F₁..F₃`, columns `ᾱ, σ̄, λ̄`.
pub fn limiting_jacobian<F: ActivationFamily + ?Sized>(
    fam: &F,
    gamma: f64,
    pbar: &RescaledPoint,
    rule: &GaussHermiteRule,
) -> Result<[[f64; 3]; 3]> {
    check_positive("gamma", gamma)?;
    let e = |f: &dyn Fn(f64) -> f64| expect_1d(f, 0.0, gamma, rule);
    let s = |q: f64| fam.sigma(q);
    let m13 = e(&|q| s(q) * s(-q) * s(-q))?;
    let m21 = e(&|q| fam.sigma_prime(q) * q * q)?;
    let m22 = e(&|q| s(q) * q * fam.sigma_second(-q))?;
    let m23 = e(&|q| s(q) * s(-q) * q * fam.sigma_prime(q))?;
    let m33 = e(&|q| fam.sigma_prime(q))?;
    Ok([
        [0.0, 2.0 * pbar.sigma_bar, -4.0 * pbar.lambda_bar * m13],
        [-0.5 * m21, m22 * pbar.sigma_bar, -m23],
        [0.0, 0.0, m33],
    ])
}

/// Central-difference Jacobian of [`residual_rescaled`].
pub fn finite_difference_jacobian<F: ActivationFamily + ?Sized>(
    fam: &F,
    kappa: f64,
    gamma: f64,
    pbar: &RescaledPoint,
    rule: &GaussHermiteRule,
    rel_step: f64,
) -> Result<[[f64; 3]; 3]> {
    let base = pbar.to_vector();
    let mut jac = [[0.0; 3]; 3];
    for j in 0..3 {
        let h = rel_step * base[j].abs().max(1.0);
        let mut plus = base;
        let mut minus = base;
        plus[j] += h;
        minus[j] -= h;
        let fp = residual_rescaled(fam, kappa, gamma, &RescaledPoint::from_vector(&plus), rule)?;
        let fm = residual_rescaled(fam, kappa, gamma, &RescaledPoint::from_vector(&minus), rule)?;
        for i in 0..3 {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Keeps iterates inside `{α > 0, σ̄ > 0, λ̄ > 0}`.
fn project(v: &mut Vector3<f64>, kappa: f64) {
    const FLOOR: f64 = 1e-8;
    v[1] = v[1].max(FLOOR);
    v[2] = v[2].max(FLOOR);
    v[0] = v[0].max((FLOOR - 1.0) / kappa);
}

struct NewtonOutcome {
    point: RescaledPoint,
    residual: f64,
    iterations: usize,
}

/// Damped Newton with backtracking on `‖F‖`.
fn newton<F: ActivationFamily + ?Sized>(
    fam: &F,
    kappa: f64,
    gamma: f64,
    start: RescaledPoint,
    rule: &GaussHermiteRule,
    options: &SolverOptions,
) -> std::result::Result<NewtonOutcome, (f64, RescaledPoint)> {
    let eval = |p: &RescaledPoint| residual_rescaled(fam, kappa, gamma, p, rule).ok();
    let mut x = start.to_vector();
    project(&mut x, kappa);
    let mut point = RescaledPoint::from_vector(&x);
    let Some(mut f) = eval(&point) else {
        return Err((f64::INFINITY, point));
    };
    let mut fnorm = norm(&f);
    let mut iterations = 0;

    while fnorm > options.tol {
        if iterations >= options.max_iter {
            return Err((fnorm, point));
        }
        iterations += 1;
        let Ok(jac) = finite_difference_jacobian(fam, kappa, gamma, &point, rule, options.fd_step)
        else {
            return Err((fnorm, point));
        };
        let jm = Matrix3::from_fn(|i, j| jac[i][j]);
        let rhs = -Vector3::new(f[0], f[1], f[2]);
        let Some(delta) = jm.lu().solve(&rhs) else {
            return Err((fnorm, point));
        };
        if !delta.iter().all(|d| d.is_finite()) {
            return Err((fnorm, point));
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=30 {
            let mut trial = x + delta * t;
            project(&mut trial, kappa);
            let trial_point = RescaledPoint::from_vector(&trial);
            if let Some(ft) = eval(&trial_point) {
                let tn = norm(&ft);
                if tn.is_finite() && tn < (1.0 - 1e-4 * t) * fnorm {
                    accepted = Some((trial, trial_point, ft, tn));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((nx, np, nf, nn)) => {
                x = nx;
                point = np;
                f = nf;
                fnorm = nn;
            }
            None => return Err((fnorm, point)),
        }
    }
    Ok(NewtonOutcome {
        point,
        residual: fnorm,
        iterations,
    })
}

/// Aspect ratios visited by the continuation: geometric from
/// `min(kappa, start)` up to `kappa`, ratio at most 1.5, capped in length.
pub fn continuation_ladder(kappa: f64, start: f64, max_steps: usize) -> Vec<f64> {
    let first = kappa.min(start);
    if first >= kappa || max_steps <= 1 {
        return vec![kappa];
    }
    let span = (kappa / first).ln();
    let steps = ((span / 1.5f64.ln()).ceil() as usize + 1).clamp(2, max_steps);
    let mut ladder: Vec<f64> = (0..steps)
        .map(|j| first * (span * j as f64 / (steps - 1) as f64).exp())
        .collect();
    *ladder.last_mut().expect("non-empty ladder") = kappa;
    ladder
}

/// Solve the system at `(kappa, gamma)` by continuation from the small-κ
/// expansion point.
pub fn solve<F: ActivationFamily + ?Sized>(
    fam: &F,
    kappa: f64,
    gamma: f64,
    options: &SolverOptions,
) -> Result<LimitSolution> {
    check_positive("kappa", kappa)?;
    check_positive("gamma", gamma)?;
    check_positive("ladder_start", options.ladder_start)?;
    let rule = gauss_hermite(options.quad_order)?;
    let coeffs = expansion_coefficients(fam, gamma, &rule)?;
    let p0 = RescaledPoint::new(
        coeffs.alpha_bar0,
        coeffs.sigma_bar0_sq.sqrt(),
        coeffs.lambda_bar0,
    );

    let ladder = continuation_ladder(kappa, options.ladder_start, options.max_ladder_steps);
    let mut history: Vec<(f64, RescaledPoint)> = vec![(0.0, p0)];
    let mut total_iterations = 0;
    let mut last = None;
    for &k in &ladder {
        // Secant predictor through the last two accepted points.
        let guess = match history.as_slice() {
            [.., (k0, a), (k1, b)] if *k1 > 0.0 => {
                let t = (k - k1) / (k1 - k0);
                RescaledPoint::new(
                    b.alpha_bar + t * (b.alpha_bar - a.alpha_bar),
                    b.sigma_bar + t * (b.sigma_bar - a.sigma_bar),
                    b.lambda_bar + t * (b.lambda_bar - a.lambda_bar),
                )
            }
            [.., (_, b)] => *b,
            [] => p0,
        };
        let outcome = newton(fam, k, gamma, guess, &rule, options).or_else(|_| {
            // Fall back to the plain warm start if the predictor overshot.
            let (_, prev) = *history.last().expect("history seeded");
            newton(fam, k, gamma, prev, &rule, options)
        });
        match outcome {
            Ok(out) => {
                total_iterations += out.iterations;
                history.push((k, out.point));
                last = Some(out);
            }
            Err((best_residual, p)) => {
                return Err(Error::SolveFailed {
                    kappa: k,
                    best_residual,
                    last_iterate: [p.alpha_bar, p.sigma_bar, p.lambda_bar],
                });
            }
        }
    }

    let out = last.expect("ladder is non-empty");
    let (alpha, sigma, lambda) = out.point.to_original(kappa);
    if !(alpha > 0.0 && sigma > 0.0 && lambda > 0.0) {
        return Err(Error::SolveFailed {
            kappa,
            best_residual: out.residual,
            last_iterate: [
                out.point.alpha_bar,
                out.point.sigma_bar,
                out.point.lambda_bar,
            ],
        });
    }
    let (r_star, c_star) = concentration_values(kappa, gamma, alpha, sigma);
    Ok(LimitSolution {
        family: fam.name().to_string(),
        kappa,
        gamma,
        alpha_star: alpha,
        sigma_star: sigma,
        lambda_star: lambda,
        r_star,
        c_star,
        rescaled: out.point,
        residual_norm: out.residual,
        solver_path: ladder,
        newton_iterations: total_iterations,
        quad_order: options.quad_order,
    })
}
