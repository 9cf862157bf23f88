//! Calibration curves, small-κ expansions and the over-/under-confidence
//! sufficient conditions.
//!
//! For a classifier `σ(ŵ·x)` on Gaussian inputs with `‖w★‖ = γ`, the
//! calibration error at level `p` has the closed form
//!
//! ```text
//! Δ_p = p − E_Z[ σ( (γ/‖ŵ‖) cos θ̂ · σ⁻¹(p) + sin θ̂ · γ · Z ) ]
//! ```
//!
//! and in the proportional limit `(‖ŵ‖, cos θ̂) → (R★, c★)`. The first-order
//! coefficient `C_p` of the limiting error in κ has a closed form in terms of
//! the expansion constants `(ᾱ₀, σ̄₀², λ̄₀)`.

use serde::{Deserialize, Serialize};

use crate::activation::ActivationFamily;
use crate::error::{Error, Result};
use crate::fixed_point::{solve, LimitSolution, SolverOptions};
use crate::quadrature::{expect_1d_kinked, gauss_hermite, GaussHermiteRule, GaussLegendreRule};

/// Beyond this many standard deviations the normal density is below 1e-31.
const OUTER_CUTOFF: f64 = 12.0;

/// First-order constants of the solution path at κ → 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCoefficients {
    pub gamma: f64,
    pub alpha_bar0: f64,
    pub sigma_bar0_sq: f64,
    pub lambda_bar0: f64,
    /// `E[Q₁ σ''(Q₁)]`; its sign decides the sign of `ᾱ₀`.
    pub e_q_sigma_second: f64,
}

impl ExpansionCoefficients {
    /// `ᾱ₀ + σ̄₀²/γ²`, positive for every admissible family.
    pub fn drift(&self) -> f64 {
        self.alpha_bar0 + self.sigma_bar0_sq / (self.gamma * self.gamma)
    }
}

pub fn expansion_coefficients<F: ActivationFamily + ?Sized>(
    fam: &F,
    gamma: f64,
    rule: &GaussHermiteRule,
) -> Result<ExpansionCoefficients> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let kinks = fam.breakpoints();
    let e = |f: &dyn Fn(f64) -> f64| expect_1d_kinked(f, 0.0, gamma, kinks, rule);
    let cross = e(&|q| fam.sigma(q) * fam.sigma(-q))?;
    let curvature = e(&|q| fam.sigma_prime(q))?;
    let third = e(&|q| q * fam.sigma_second(q))?;
    let second_moment = e(&|q| q * q * fam.sigma_prime(q))?;
    Ok(ExpansionCoefficients {
        gamma,
        alpha_bar0: -third * cross / (2.0 * second_moment * curvature * curvature),
        sigma_bar0_sq: cross / (curvature * curvature),
        lambda_bar0: 1.0 / curvature,
        e_q_sigma_second: third,
    })
}

/// `C_p = σ'(z) z (ᾱ₀ + σ̄₀²/γ²) − ½ σ''(z) σ̄₀²` with `z = σ⁻¹(p)`.
pub fn cp_from_coefficients<F: ActivationFamily + ?Sized>(
    fam: &F,
    coeffs: &ExpansionCoefficients,
    p: f64,
) -> Result<f64> {
    let z = fam.sigma_inverse(p)?;
    Ok(fam.sigma_prime(z) * z * coeffs.drift() - 0.5 * fam.sigma_second(z) * coeffs.sigma_bar0_sq)
}

pub fn cp_coefficient<F: ActivationFamily + ?Sized>(
    fam: &F,
    gamma: f64,
    p: f64,
    rule: &GaussHermiteRule,
) -> Result<f64> {
    let coeffs = expansion_coefficients(fam, gamma, rule)?;
    cp_from_coefficients(fam, &coeffs, p)
}

/// Outcome of the sufficient-condition test at one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// σ is concave at `σ⁻¹(p)`.
    OverConfident,
    /// `E[Q₁σ''(Q₁)] > 0` and `σ''(z) − 2σ'(z) z/γ² > 0`.
    UnderConfident,
    Indeterminate,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::OverConfident => "OverConfident",
            Verdict::UnderConfident => "UnderConfident",
            Verdict::Indeterminate => "Indeterminate",
        }
    }
}

/// Evaluate the sufficient conditions for the sign of `C_p`, `p ∈ (0.5, 1)`.
pub fn check_conditions<F: ActivationFamily + ?Sized>(
    fam: &F,
    gamma: f64,
    p: f64,
    rule: &GaussHermiteRule,
) -> Result<Verdict> {
    if !(p > 0.5 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "conditions are stated for p in (0.5, 1), got {p}"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let z = fam.sigma_inverse(p)?;
    let curvature = fam.sigma_second(z);
    if curvature <= 0.0 {
        return Ok(Verdict::OverConfident);
    }
    let moment = expect_1d_kinked(|q| q * fam.sigma_second(q), 0.0, gamma, fam.breakpoints(), rule)?;
    let margin = curvature - 2.0 * fam.sigma_prime(z) * z / (gamma * gamma);
    if moment > 0.0 && margin > 0.0 {
        Ok(Verdict::UnderConfident)
    } else {
        Ok(Verdict::Indeterminate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveKind {
    /// Closed form at a concrete weight vector.
    #[serde(rename = "exact-finite-w")]
    ExactFiniteW,
    /// Proportional limit `C_{p,κ}`.
    #[serde(rename = "limiting")]
    Limiting,
    /// `C_p · κ`.
    #[serde(rename = "first-order")]
    FirstOrder,
}

impl CurveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveKind::ExactFiniteW => "exact-finite-w",
            CurveKind::Limiting => "limiting",
            CurveKind::FirstOrder => "first-order",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "exact-finite-w" => Some(CurveKind::ExactFiniteW),
            "limiting" => Some(CurveKind::Limiting),
            "first-order" => Some(CurveKind::FirstOrder),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub kappa: Option<f64>,
    pub gamma: f64,
    pub w_norm: Option<f64>,
    pub cos_theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub family: String,
    pub kind: CurveKind,
    pub params: CurveParams,
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
}

impl CalibrationCurve {
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.levels.iter().copied().zip(self.values.iter().copied())
    }

    /// Value at an exact level, if present.
    pub fn value_at(&self, p: f64) -> Option<f64> {
        self.iter().find(|(q, _)| *q == p).map(|(_, v)| v)
    }
}

/// `{0.505, 0.510, …, 0.995}`.
pub fn default_levels() -> Vec<f64> {
    (101..=199).map(|i| i as f64 * 0.005).collect()
}

/// `levels` followed by `1 − p` for each level not already present.
pub fn mirrored_levels(levels: &[f64]) -> Vec<f64> {
    let mut out = levels.to_vec();
    for &p in levels {
        let q = 1.0 - p;
        if !out.iter().any(|&x| (x - q).abs() < 1e-15) {
            out.push(q);
        }
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

/// `p − E_Z[σ(slope·σ⁻¹(p) + spread·Z)]`.
pub fn calibration_gap<F: ActivationFamily + ?Sized>(
    fam: &F,
    p: f64,
    slope: f64,
    spread: f64,
    rule: &GaussHermiteRule,
) -> Result<f64> {
    if p == 0.5 {
        // σ(−t) = 1 − σ(t): the gap vanishes at ½ for every slope and spread.
        return Ok(0.0);
    }
    let z = fam.sigma_inverse(p)?;
    let mean = expect_1d_kinked(|t| fam.sigma(t), slope * z, spread, fam.breakpoints(), rule)?;
    Ok(p - mean)
}

fn gaps<F: ActivationFamily + ?Sized>(
    fam: &F,
    levels: &[f64],
    slope: f64,
    spread: f64,
    rule: &GaussHermiteRule,
) -> Result<Vec<f64>> {
    levels
        .iter()
        .map(|&p| calibration_gap(fam, p, slope, spread, rule))
        .collect()
}

/// Closed-form curve at a concrete `(‖ŵ‖, cos θ̂)`.
pub fn finite_w_curve<F: ActivationFamily + ?Sized>(
    fam: &F,
    gamma: f64,
    w_norm: f64,
    cos_theta: f64,
    levels: &[f64],
    rule: &GaussHermiteRule,
) -> Result<CalibrationCurve> {
    if !(w_norm > 0.0) || !(-1.0..=1.0).contains(&cos_theta) || !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need w_norm > 0, gamma > 0 and cos_theta in [-1, 1]; got {w_norm}, {gamma}, {cos_theta}"
        )));
    }
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let values = gaps(fam, levels, gamma / w_norm * cos_theta, sin_theta * gamma, rule)?;
    Ok(CalibrationCurve {
        family: fam.name().to_string(),
        kind: CurveKind::ExactFiniteW,
        params: CurveParams {
            kappa: None,
            gamma,
            w_norm: Some(w_norm),
            cos_theta: Some(cos_theta),
        },
        levels: levels.to_vec(),
        values,
    })
}

/// `C_{p,κ}` at an already solved fixed point.
pub fn curve_at_solution<F: ActivationFamily + ?Sized>(
    fam: &F,
    solution: &LimitSolution,
    levels: &[f64],
    rule: &GaussHermiteRule,
) -> Result<CalibrationCurve> {
    let values = gaps(fam, levels, solution.slope(), solution.spread(), rule)?;
    Ok(CalibrationCurve {
        family: fam.name().to_string(),
        kind: CurveKind::Limiting,
        params: CurveParams {
            kappa: Some(solution.kappa),
            gamma: solution.gamma,
            w_norm: Some(solution.r_star),
            cos_theta: Some(solution.c_star),
        },
        levels: levels.to_vec(),
        values,
    })
}

/// Limiting calibration curve `C_{p,κ}`; solves the system first.
pub fn limiting_curve<F: ActivationFamily + ?Sized>(
    fam: &F,
    kappa: f64,
    gamma: f64,
    levels: &[f64],
    options: &SolverOptions,
) -> Result<CalibrationCurve> {
    let solution = solve(fam, kappa, gamma, options)?;
    let rule = gauss_hermite(options.quad_order)?;
    curve_at_solution(fam, &solution, levels, &rule)
}

/// First-order approximation `C_p · κ`.
pub fn first_order_curve<F: ActivationFamily + ?Sized>(
    fam: &F,
    kappa: f64,
    gamma: f64,
    levels: &[f64],
    rule: &GaussHermiteRule,
) -> Result<CalibrationCurve> {
    let coeffs = expansion_coefficients(fam, gamma, rule)?;
    let values = levels
        .iter()
        .map(|&p| cp_from_coefficients(fam, &coeffs, p).map(|c| c * kappa))
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationCurve {
        family: fam.name().to_string(),
        kind: CurveKind::FirstOrder,
        params: CurveParams {
            kappa: Some(kappa),
            gamma,
            w_norm: None,
            cos_theta: None,
        },
        levels: levels.to_vec(),
        values,
    })
}

/// Population CE of `σ(ŵ·x)` given `(‖ŵ‖, cos θ̂)`:
/// `∫ |σ(R x) − E_Z σ(γ c x + √(1−c²) γ Z)| φ(x) dx`.
///
/// The integrand is even in `x`, so only the half line is integrated, with
/// a Gauss–Legendre rule of `outer_order` nodes on `[0, 12]`. This keeps the
/// kink of `|·|` at the origin on the boundary of the domain.
pub fn ce_at<F: ActivationFamily + ?Sized>(
    fam: &F,
    gamma: f64,
    w_norm: f64,
    cos_theta: f64,
    rule: &GaussHermiteRule,
    outer_order: usize,
) -> Result<f64> {
    let outer = GaussLegendreRule::new(outer_order)?;
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut err = None;
    let half = outer.integrate(0.0, OUTER_CUTOFF, |x| {
        let truth = expect_1d_kinked(
            |t| fam.sigma(t),
            gamma * cos_theta * x,
            sin_theta * gamma,
            fam.breakpoints(),
            rule,
        );
        match truth {
            Ok(t) => (fam.sigma(w_norm * x) - t).abs() * (-0.5 * x * x).exp() * norm,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(2.0 * half),
    }
}

/// Limiting CE `C_κ`; the outer rule has twice the inner order.
pub fn ce_limit<F: ActivationFamily + ?Sized>(
    fam: &F,
    kappa: f64,
    gamma: f64,
    options: &SolverOptions,
) -> Result<f64> {
    let solution = solve(fam, kappa, gamma, options)?;
    let rule = gauss_hermite(options.quad_order)?;
    ce_at(
        fam,
        gamma,
        solution.r_star,
        solution.c_star,
        &rule,
        2 * options.quad_order,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{Logistic, Underconf};
    use crate::quadrature::DEFAULT_ORDER;
    use approx::assert_abs_diff_eq;

    fn rule() -> std::sync::Arc<GaussHermiteRule> {
        gauss_hermite(DEFAULT_ORDER).unwrap()
    }

    /// Trapezoid oracle for `E[f(Q)]`, `Q ~ N(0, γ²)`.
    fn trapezoid<F: Fn(f64) -> f64>(f: F, gamma: f64) -> f64 {
        let h = 5e-4;
        let n = (80.0 / h) as i64;
        let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        (0..=n)
            .map(|i| {
                let x = -40.0 + h * i as f64;
                f(gamma * x) * (-0.5 * x * x).exp() * c
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn logistic_coefficients_match_oracle() {
        let c = expansion_coefficients(&Logistic, 1.0, &rule()).unwrap();
        let l = Logistic;
        let cross = trapezoid(|q| l.sigma(q) * l.sigma(-q), 1.0);
        let curv = trapezoid(|q| l.sigma_prime(q), 1.0);
        let third = trapezoid(|q| q * l.sigma_second(q), 1.0);
        let m2 = trapezoid(|q| q * q * l.sigma_prime(q), 1.0);
        assert_abs_diff_eq!(c.sigma_bar0_sq, cross / (curv * curv), epsilon = 1e-12);
        assert_abs_diff_eq!(c.lambda_bar0, 1.0 / curv, epsilon = 1e-12);
        assert_abs_diff_eq!(
            c.alpha_bar0,
            -third * cross / (2.0 * m2 * curv * curv),
            epsilon = 1e-12
        );
        // logistic σ is concave on the positive axis, so E[Qσ''(Q)] < 0
        assert!(c.alpha_bar0 > 0.0);
    }

    #[test]
    fn underconf_moment_and_sign() {
        let c = expansion_coefficients(&Underconf, 1.0, &rule()).unwrap();
        assert_abs_diff_eq!(c.e_q_sigma_second, 0.0483, epsilon = 5e-4);
        assert!(c.alpha_bar0 < 0.0);
    }

    #[test]
    fn drift_positive_across_families_and_gammas() {
        for gamma in [0.25, 0.5, 1.0, 2.0, 4.0] {
            for c in [
                expansion_coefficients(&Logistic, gamma, &rule()).unwrap(),
                expansion_coefficients(&Underconf, gamma, &rule()).unwrap(),
            ] {
                assert!(c.drift() > 0.0, "gamma={gamma} {c:?}");
                assert!(c.sigma_bar0_sq > 0.0 && c.lambda_bar0 > 0.0);
            }
        }
    }

    #[test]
    fn cp_examples() {
        let r = rule();
        assert_abs_diff_eq!(cp_coefficient(&Logistic, 1.0, 0.5, &r).unwrap(), 0.0);
        assert_abs_diff_eq!(cp_coefficient(&Underconf, 1.0, 0.5, &r).unwrap(), 0.0);
        for p in [0.6, 0.75, 0.9] {
            assert!(cp_coefficient(&Logistic, 1.0, p, &r).unwrap() > 0.0);
        }
        assert!(cp_coefficient(&Underconf, 1.0, 0.505, &r).unwrap() < 0.0);
        assert!(matches!(
            cp_coefficient(&Logistic, 1.0, 1.0, &r),
            Err(Error::NonInvertible { .. })
        ));
    }

    #[test]
    fn verdict_examples() {
        let r = rule();
        assert_eq!(check_conditions(&Logistic, 1.0, 0.8, &r).unwrap(), Verdict::OverConfident);
        assert_eq!(
            check_conditions(&Underconf, 1.0, 0.505, &r).unwrap(),
            Verdict::UnderConfident
        );
        // σ⁻¹(0.6) lies beyond 0.96 where sin z + 2z cos z − 2z < 0 but σ'' > 0.
        let z = Underconf.sigma_inverse(0.6).unwrap();
        let margin = z.sin() + 2.0 * z * z.cos() - 2.0 * z;
        assert!(margin < 0.0 && z.sin() > 0.0);
        assert_eq!(
            check_conditions(&Underconf, 1.0, 0.6, &r).unwrap(),
            Verdict::Indeterminate
        );
        assert!(check_conditions(&Logistic, 1.0, 0.4, &r).is_err());
    }

    #[test]
    fn verdicts_agree_with_cp_sign() {
        let r = rule();
        for gamma in [0.5, 1.0, 2.0] {
            for fam in [&Logistic as &dyn ActivationFamily, &Underconf] {
                let coeffs = expansion_coefficients(fam, gamma, &r).unwrap();
                for i in 1..200 {
                    let p = 0.5 + 0.0025 * i as f64;
                    let cp = cp_from_coefficients(fam, &coeffs, p).unwrap();
                    match check_conditions(fam, gamma, p, &r).unwrap() {
                        Verdict::OverConfident => assert!(cp > 0.0, "{} p={p}", fam.name()),
                        Verdict::UnderConfident => assert!(cp < 0.0, "{} p={p}", fam.name()),
                        Verdict::Indeterminate => {}
                    }
                }
            }
        }
    }

    #[test]
    fn finite_w_examples() {
        let r = rule();
        let levels = [0.1, 0.3, 0.5, 0.75, 0.9];
        let c = finite_w_curve(&Logistic, 1.0, 1.0, 1.0, &levels, &r).unwrap();
        for v in &c.values {
            assert!(v.abs() < 1e-14);
        }
        let c = finite_w_curve(&Logistic, 1.0, 2.0, 1.0, &[0.75], &r).unwrap();
        let s3 = 3f64.sqrt();
        assert_abs_diff_eq!(c.values[0], 0.75 - s3 / (s3 + 1.0), epsilon = 1e-14);
        assert_abs_diff_eq!(c.values[0], 0.1160, epsilon = 1e-4);
        let c = finite_w_curve(&Underconf, 1.3, 0.7, 0.4, &[0.5], &r).unwrap();
        assert!(c.values[0].abs() < 1e-15);
        assert!(finite_w_curve(&Logistic, 1.0, 0.0, 1.0, &[0.6], &r).is_err());
        assert!(finite_w_curve(&Logistic, 1.0, 1.0, 1.2, &[0.6], &r).is_err());
    }

    #[test]
    fn finite_w_antisymmetry() {
        let r = rule();
        let levels = mirrored_levels(&default_levels());
        for fam in [&Logistic as &dyn ActivationFamily, &Underconf] {
            let c = finite_w_curve(fam, 1.0, 1.4, 0.93, &levels, &r).unwrap();
            for (p, v) in c.iter() {
                let w = c.value_at(1.0 - p).or_else(|| {
                    c.iter().find(|(q, _)| (q - (1.0 - p)).abs() < 1e-15).map(|x| x.1)
                });
                assert!((v + w.unwrap()).abs() <= 1e-9, "p={p}");
            }
        }
    }

    #[test]
    fn default_levels_grid() {
        let l = default_levels();
        assert_eq!(l.len(), 99);
        assert_abs_diff_eq!(l[0], 0.505, epsilon = 1e-15);
        assert_abs_diff_eq!(l[98], 0.995, epsilon = 1e-15);
        assert_eq!(mirrored_levels(&l).len(), 198);
        assert_eq!(mirrored_levels(&[0.5, 0.7]).len(), 3);
    }

    #[test]
    fn ce_of_perfect_model_is_zero() {
        let r = rule();
        assert!(ce_at(&Logistic, 1.0, 1.0, 1.0, &r, 240).unwrap() < 1e-15);
        // Over-scaled weights are over-confident everywhere.
        assert!(ce_at(&Logistic, 1.0, 1.5, 1.0, &r, 240).unwrap() > 0.01);
    }
}
