//! Activation/loss families.
//!
//! A family is a convex loss `ρ` whose derivative `ρ' = σ` is the activation
//! of the binary linear model `P(y = 1 | x) = σ(w·x)`. Every downstream
//! formula consumes `ρ'` through `ρ''''`; the value of `ρ` itself only enters
//! the ERM objective and never a limiting quantity.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;
const INV_FOUR_PI: f64 = 1.0 / (4.0 * PI);

/// A symmetric activation together with its integrated loss.
///
/// Implementors must satisfy `σ(z) + σ(-z) = 1`, `σ(0) = 1/2`, and
/// `ρ' = σ` pointwise. All derivatives are expected to be bounded.
pub trait ActivationFamily: Send + Sync {
    fn name(&self) -> &str;

    /// The loss `ρ(z)`.
    fn rho(&self, z: f64) -> f64;

    /// `σ(z) = ρ'(z)`.
    fn sigma(&self, z: f64) -> f64;

    /// `σ'(z) = ρ''(z)`.
    fn sigma_prime(&self, z: f64) -> f64;

    /// `σ''(z) = ρ'''(z)`.
    fn sigma_second(&self, z: f64) -> f64;

    /// `σ'''(z) = ρ''''(z)`.
    fn sigma_third(&self, z: f64) -> f64;

    /// Whether `ρ''''` is continuous on the whole real line.
    fn is_smooth(&self) -> bool;

    /// Points where some derivative up to the fourth jumps; quadrature
    /// splits its panels there.
    fn breakpoints(&self) -> &[f64] {
        &[]
    }

    /// `k`-th derivative of the loss for `k` in `0..=4`.
    fn rho_k(&self, z: f64, k: usize) -> f64 {
        match k {
            0 => self.rho(z),
            1 => self.sigma(z),
            2 => self.sigma_prime(z),
            3 => self.sigma_second(z),
            4 => self.sigma_third(z),
            _ => panic!("rho_k supports derivative orders 0..=4, got {k}"),
        }
    }

    /// Inverse activation `σ⁻¹(p)`.
    fn sigma_inverse(&self, p: f64) -> Result<f64> {
        invert_monotone(self, p)
    }
}

/// Safeguarded Newton inversion of a monotone activation.
///
/// Newton is seeded at 0 and falls back to bisection whenever the step
/// leaves the current bracket or the slope vanishes. The bracket grows
/// geometrically from `[0, 1]` (or `[-1, 0]`).
pub fn invert_monotone<F: ActivationFamily + ?Sized>(fam: &F, p: f64) -> Result<f64> {
    let non_invertible = || Error::NonInvertible {
        family: fam.name().to_string(),
        p,
    };
    if !(p > 0.0 && p < 1.0) {
        return Err(non_invertible());
    }
    let g = |z: f64| fam.sigma(z) - p;

    let g0 = g(0.0);
    if g0 == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = if g0 < 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
    if g0 < 0.0 {
        while g(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e4 {
                return Err(non_invertible());
            }
        }
    } else {
        while g(lo) > 0.0 {
            hi = lo;
            lo *= 2.0;
            if lo < -1e4 {
                return Err(non_invertible());
            }
        }
    }

    let mut z = 0.0;
    let mut gz = g0;
    for _ in 0..400 {
        if gz == 0.0 {
            break;
        }
        let slope = fam.sigma_prime(z);
        let newton = if slope > 0.0 { z - gz / slope } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = next - z;
        z = next;
        gz = g(z);
        if gz < 0.0 {
            lo = z;
        } else if gz > 0.0 {
            hi = z;
        }
        let width = hi - lo;
        if width <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
        if gz.abs() <= 1e-16 && step.abs() <= 4.0 * f64::EPSILON * z.abs().max(1e-8) {
            break;
        }
    }
    if gz.abs() > 1e-12 {
        return Err(Error::NoConvergence {
            what: "sigma_inverse",
            iterations: 400,
            residual: gz.abs(),
        });
    }
    Ok(z)
}

/// Logistic loss `ρ(z) = log(1 + e^z)` with the sigmoid activation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Logistic;

impl ActivationFamily for Logistic {
    fn name(&self) -> &str {
        "logistic"
    }

    fn rho(&self, z: f64) -> f64 {
        // ρ(0) = log 2 falls out of this form.
        z.max(0.0) + (-z.abs()).exp().ln_1p()
    }

    fn sigma(&self, z: f64) -> f64 {
        if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        }
    }

    fn sigma_prime(&self, z: f64) -> f64 {
        let e = (-z.abs()).exp();
        e / ((1.0 + e) * (1.0 + e))
    }

    fn sigma_second(&self, z: f64) -> f64 {
        // σ'' = σ'(1 - 2σ) and 1 - 2σ(z) = -tanh(z/2)
        -self.sigma_prime(z) * (0.5 * z).tanh()
    }

    fn sigma_third(&self, z: f64) -> f64 {
        let s1 = self.sigma_prime(z);
        s1 * (1.0 - 6.0 * s1)
    }

    fn is_smooth(&self) -> bool {
        true
    }

    fn sigma_inverse(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::NonInvertible {
                family: self.name().to_string(),
                p,
            });
        }
        Ok(p.ln() - (-p).ln_1p())
    }
}

/// Piecewise activation `½ + (z − sin z)/(4π)` on `|z| ≤ 2π`, saturated
/// to 0 and 1 outside. Convex on small positive `z`, which is what makes
/// under-confidence possible. `ρ''''` jumps at `±2π`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Underconf;

/// `z − sin z` without cancellation near zero.
fn z_minus_sin(z: f64) -> f64 {
    if z.abs() < 0.25 {
        let z2 = z * z;
        // z³/3! − z⁵/5! + z⁷/7! − z⁹/9! + z¹¹/11!
        z * z2
            * (1.0 / 6.0
                - z2 * (1.0 / 120.0
                    - z2 * (1.0 / 5040.0 - z2 * (1.0 / 362_880.0 - z2 / 39_916_800.0))))
    } else {
        z - z.sin()
    }
}

impl ActivationFamily for Underconf {
    fn name(&self) -> &str {
        "underconf"
    }

    fn rho(&self, z: f64) -> f64 {
        if z > TWO_PI {
            1.5 * PI + (z - TWO_PI)
        } else if z < -TWO_PI {
            -0.5 * PI
        } else {
            let s = (0.5 * z).sin();
            0.5 * z + (0.5 * z * z - 2.0 * s * s) * INV_FOUR_PI
        }
    }

    fn sigma(&self, z: f64) -> f64 {
        if z > TWO_PI {
            1.0
        } else if z < -TWO_PI {
            0.0
        } else {
            0.5 + z_minus_sin(z) * INV_FOUR_PI
        }
    }

    fn sigma_prime(&self, z: f64) -> f64 {
        if z.abs() > TWO_PI {
            0.0
        } else {
            let s = (0.5 * z).sin();
            2.0 * s * s * INV_FOUR_PI
        }
    }

    fn sigma_second(&self, z: f64) -> f64 {
        if z.abs() > TWO_PI {
            0.0
        } else {
            z.sin() * INV_FOUR_PI
        }
    }

    fn sigma_third(&self, z: f64) -> f64 {
        if z.abs() > TWO_PI {
            0.0
        } else {
            z.cos() * INV_FOUR_PI
        }
    }

    fn is_smooth(&self) -> bool {
        false
    }

    fn breakpoints(&self) -> &[f64] {
        &[-TWO_PI, TWO_PI]
    }
}

pub type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-supplied family. All five derivative orders must be provided.
pub struct CustomFamily {
    name: String,
    derivatives: [ScalarFn; 5],
    smooth: bool,
}

impl CustomFamily {
    /// `derivatives[k]` evaluates `ρ^(k)` for `k = 0..=4`.
    pub fn new(name: impl Into<String>, derivatives: [ScalarFn; 5], smooth: bool) -> Self {
        Self {
            name: name.into(),
            derivatives,
            smooth,
        }
    }
}

impl fmt::Debug for CustomFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFamily")
            .field("name", &self.name)
            .field("smooth", &self.smooth)
            .finish_non_exhaustive()
    }
}

impl ActivationFamily for CustomFamily {
    fn name(&self) -> &str {
        &self.name
    }
    fn rho(&self, z: f64) -> f64 {
        (self.derivatives[0])(z)
    }
    fn sigma(&self, z: f64) -> f64 {
        (self.derivatives[1])(z)
    }
    fn sigma_prime(&self, z: f64) -> f64 {
        (self.derivatives[2])(z)
    }
    fn sigma_second(&self, z: f64) -> f64 {
        (self.derivatives[3])(z)
    }
    fn sigma_third(&self, z: f64) -> f64 {
        (self.derivatives[4])(z)
    }
    fn is_smooth(&self) -> bool {
        self.smooth
    }
}

pub fn logistic_family() -> Logistic {
    Logistic
}

pub fn underconf_family() -> Underconf {
    Underconf
}

/// Free-function form of [`ActivationFamily::sigma_inverse`].
pub fn sigma_inverse<F: ActivationFamily + ?Sized>(fam: &F, p: f64) -> Result<f64> {
    fam.sigma_inverse(p)
}

/// Built-in families addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyName {
    Logistic,
    Underconf,
}

impl FamilyName {
    pub const ALL: [FamilyName; 2] = [FamilyName::Logistic, FamilyName::Underconf];

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyName::Logistic => "logistic",
            FamilyName::Underconf => "underconf",
        }
    }

    pub fn family(self) -> Arc<dyn ActivationFamily> {
        match self {
            FamilyName::Logistic => Arc::new(Logistic),
            FamilyName::Underconf => Arc::new(Underconf),
        }
    }
}

impl fmt::Display for FamilyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FamilyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" => Ok(FamilyName::Logistic),
            "underconf" => Ok(FamilyName::Underconf),
            _ => Err(Error::UnknownFamily(s.to_string())),
        }
    }
}

pub fn family_by_name(name: &str) -> Result<Arc<dyn ActivationFamily>> {
    Ok(name.parse::<FamilyName>()?.family())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        (0..=n).map(move |i| lo + (hi - lo) * i as f64 / n as f64)
    }

    #[test]
    fn sigma_at_zero_is_half() {
        assert_eq!(Logistic.sigma(0.0), 0.5);
        assert_eq!(Underconf.sigma(0.0), 0.5);
    }

    #[test]
    fn rho_constants() {
        assert_abs_diff_eq!(Logistic.rho(0.0), LN_2, epsilon = 1e-15);
        assert_eq!(Underconf.rho(0.0), 0.0);
    }

    #[test]
    fn logistic_rho_prime_is_sigma() {
        for z in [-10.0, -1.0, 0.0, 1.0, 10.0] {
            let h = 1e-5;
            let fd = (Logistic.rho(z + h) - Logistic.rho(z - h)) / (2.0 * h);
            assert_abs_diff_eq!(fd, Logistic.sigma(z), epsilon = 1e-9);
            assert_eq!(Logistic.rho_k(z, 1), Logistic.sigma(z));
        }
    }

    #[test]
    fn logistic_second_derivative_at_one() {
        let e = 1f64.exp();
        let expected = -e * (e - 1.0) / (1.0 + e).powi(3);
        assert_abs_diff_eq!(Logistic.sigma_second(1.0), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, -0.09085, epsilon = 1e-5);
    }

    #[test]
    fn logistic_extreme_arguments_are_finite() {
        for z in [-700.0, -50.0, 50.0, 700.0, 1e4, -1e4] {
            for k in 0..=4 {
                assert!(Logistic.rho_k(z, k).is_finite(), "k={k} z={z}");
            }
        }
        assert_eq!(Logistic.sigma(700.0), 1.0);
        assert!(Logistic.sigma(-700.0) > 0.0);
        assert_abs_diff_eq!(Logistic.rho(700.0), 700.0, epsilon = 1e-12);
    }

    #[test]
    fn logistic_concave_on_positive_axis() {
        for t in grid(1e-3, 40.0, 4000) {
            assert!(Logistic.sigma_second(t) < 0.0, "t={t}");
        }
    }

    #[test]
    fn underconf_values() {
        assert_abs_diff_eq!(Underconf.sigma(0.96), 0.511206, epsilon = 1e-6);
        assert_eq!(Underconf.sigma(TWO_PI), 1.0);
        assert!(Underconf.sigma_prime(TWO_PI).abs() < 1e-16);
        assert_eq!(Underconf.sigma(-7.0), 0.0);
        assert_eq!(Underconf.sigma(7.0), 1.0);
        assert!(!Underconf.is_smooth());
        assert!(Logistic.is_smooth());
    }

    #[test]
    fn underconf_rho_is_continuous_at_junctions() {
        for z in [TWO_PI, -TWO_PI] {
            let left = Underconf.rho(z - 1e-12);
            let right = Underconf.rho(z + 1e-12);
            assert_abs_diff_eq!(left, right, epsilon = 1e-10);
        }
    }

    #[test]
    fn underconf_series_matches_direct_formula() {
        for z in [0.2, 0.249, 0.2501, -0.24] {
            let direct = z - f64::sin(z);
            assert_abs_diff_eq!(z_minus_sin(z), direct, epsilon = 1e-15);
        }
    }

    #[test]
    fn underconf_convexity_margin() {
        // sin z + 2z cos z − 2z > 0 on (0, 0.96]
        for z in grid(1e-4, 0.96, 2000) {
            let h = z.sin() + 2.0 * z * z.cos() - 2.0 * z;
            assert!(h > 0.0, "z={z} h={h}");
        }
    }

    #[test]
    fn symmetry_on_grid() {
        let fams: [&dyn ActivationFamily; 2] = [&Logistic, &Underconf];
        for fam in fams {
            for z in grid(-20.0, 20.0, 4000) {
                assert!((fam.sigma(z) + fam.sigma(-z) - 1.0).abs() <= 1e-12);
                assert!((fam.sigma_prime(z) - fam.sigma_prime(-z)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn finite_difference_consistency() {
        let h = 1e-4;
        let fams: [&dyn ActivationFamily; 2] = [&Logistic, &Underconf];
        for fam in fams {
            for z in grid(-12.0, 12.0, 1201) {
                if !fam.is_smooth() && (z.abs() - TWO_PI).abs() < 1e-2 {
                    continue;
                }
                for k in 0..=3 {
                    let fd = (fam.rho_k(z + h, k) - fam.rho_k(z - h, k)) / (2.0 * h);
                    let exact = fam.rho_k(z, k + 1);
                    let scale = exact.abs().max(1e-4);
                    assert!(
                        (fd - exact).abs() <= 1e-5 * scale,
                        "{} k={k} z={z} fd={fd} exact={exact}",
                        fam.name()
                    );
                }
            }
        }
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(Logistic.sigma_inverse(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(Logistic.sigma_inverse(0.75).unwrap(), 3f64.ln(), epsilon = 1e-14);
        let z = Underconf.sigma_inverse(0.5112).unwrap();
        assert_abs_diff_eq!(z, 0.96, epsilon = 2e-3);
        assert_eq!(Underconf.sigma_inverse(0.5).unwrap(), 0.0);
    }

    #[test]
    fn generic_inverse_agrees_with_closed_form() {
        for p in [1e-9, 0.01, 0.3, 0.5, 0.75, 0.999_999] {
            let generic = invert_monotone(&Logistic, p).unwrap();
            let closed = Logistic.sigma_inverse(p).unwrap();
            assert!((generic - closed).abs() <= 1e-9 * closed.abs().max(1.0));
        }
    }

    #[test]
    fn inverse_rejects_out_of_range() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                Logistic.sigma_inverse(p),
                Err(Error::NonInvertible { .. })
            ));
            assert!(matches!(
                Underconf.sigma_inverse(p),
                Err(Error::NonInvertible { .. })
            ));
        }
    }

    #[test]
    fn inverse_is_two_sided() {
        let fams: [&dyn ActivationFamily; 2] = [&Logistic, &Underconf];
        for fam in fams {
            for p in grid(0.001, 0.999, 998) {
                let z = fam.sigma_inverse(p).unwrap();
                assert!((fam.sigma(z) - p).abs() <= 1e-12, "{} p={p}", fam.name());
            }
            for z in grid(-6.0, 6.0, 1200) {
                // Only where σ is well conditioned: a flat σ maps a whole
                // interval of z onto one floating-point p.
                if fam.sigma_prime(z) < 1e-3 {
                    continue;
                }
                let back = fam.sigma_inverse(fam.sigma(z)).unwrap();
                assert!((back - z).abs() <= 1e-9, "{} z={z} back={back}", fam.name());
            }
        }
    }

    #[test]
    fn inverse_is_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for p in grid(0.0005, 0.9995, 2000) {
            let z = Underconf.sigma_inverse(p).unwrap();
            assert!(z > prev);
            prev = z;
        }
    }

    #[test]
    fn family_lookup() {
        assert_eq!(family_by_name("logistic").unwrap().name(), "logistic");
        assert_eq!(family_by_name("UNDERCONF").unwrap().name(), "underconf");
        assert!(matches!(
            family_by_name("probit"),
            Err(Error::UnknownFamily(_))
        ));
    }

    #[test]
    fn custom_family_delegates() {
        let fam = CustomFamily::new(
            "logistic-copy",
            [
                Box::new(|z| Logistic.rho(z)),
                Box::new(|z| Logistic.sigma(z)),
                Box::new(|z| Logistic.sigma_prime(z)),
                Box::new(|z| Logistic.sigma_second(z)),
                Box::new(|z| Logistic.sigma_third(z)),
            ],
            true,
        );
        assert_eq!(fam.name(), "logistic-copy");
        for z in [-3.0, 0.0, 2.5] {
            for k in 0..=4 {
                assert_eq!(fam.rho_k(z, k), Logistic.rho_k(z, k));
            }
        }
        let z = fam.sigma_inverse(0.75).unwrap();
        assert_abs_diff_eq!(z, 3f64.ln(), epsilon = 1e-10);
    }
}
