use glmcal_core::asymptotics::{cp_from_coefficients, curve_at_solution};
use glmcal_core::fixed_point::{concentration_values, continuation_ladder};
use glmcal_core::*;

fn opts() -> SolverOptions {
    SolverOptions::default()
}

#[test]
fn solutions_are_positive_and_consistent() {
    for fam in FamilyName::ALL {
        let fam = fam.family();
        for kappa in [0.002, 0.02, 0.1, 0.25] {
            let s = solve(fam.as_ref(), kappa, 1.0, &opts()).unwrap();
            assert!(s.alpha_star > 0.0 && s.sigma_star > 0.0 && s.lambda_star > 0.0);
            assert!(s.residual_norm <= 1e-10);
            let (r, c) = concentration_values(kappa, 1.0, s.alpha_star, s.sigma_star);
            assert_eq!((r, c), (s.r_star, s.c_star));
            assert!(s.c_star > 0.0 && s.c_star < 1.0);
            assert_eq!(*s.solver_path.last().unwrap(), kappa);
        }
    }
}

#[test]
fn alpha_follows_linear_trend() {
    let rule = gauss_hermite(120).unwrap();
    let c = expansion_coefficients(&Logistic, 1.0, &rule).unwrap();
    let kappa = 0.01;
    let a: Vec<f64> = [kappa, kappa / 2.0, kappa / 4.0]
        .iter()
        .map(|&k| solve(&Logistic, k, 1.0, &opts()).unwrap().alpha_star)
        .collect();
    for (hi, lo, dk) in [(a[0], a[1], kappa / 2.0), (a[1], a[2], kappa / 4.0)] {
        let slope = (hi - lo) / dk;
        assert!((slope - c.alpha_bar0).abs() <= 0.1 * c.alpha_bar0.abs(), "{slope} vs {}", c.alpha_bar0);
    }
}

#[test]
fn small_kappa_limits() {
    let rule = gauss_hermite(120).unwrap();
    let c = expansion_coefficients(&Logistic, 1.0, &rule).unwrap();
    let s = solve(&Logistic, 1e-3, 1.0, &opts()).unwrap();
    assert!((s.alpha_star - 1.0).abs() < 2e-3);
    assert!(s.lambda_star < 1e-2);
    assert!((s.sigma_star - c.sigma_bar0_sq.sqrt()).abs() < 0.01 * c.sigma_bar0_sq.sqrt());
}

/// c★ should fall and R★ rise along the ladder. A violation is reported for
/// investigation but does not fail the build.
#[test]
fn continuation_monotonic_sanity() {
    let mut prev: Option<(f64, f64, f64)> = None;
    let mut flagged = Vec::new();
    for kappa in continuation_ladder(0.25, 1e-3, 40) {
        let s = solve(&Logistic, kappa, 1.0, &opts()).unwrap();
        if let Some((k0, r0, c0)) = prev {
            if s.r_star <= r0 || s.c_star >= c0 {
                flagged.push((k0, kappa));
            }
        }
        prev = Some((kappa, s.r_star, s.c_star));
    }
    if !flagged.is_empty() {
        eprintln!("monotonicity of (R★, c★) violated between {flagged:?}; investigate");
    }
}

#[test]
fn limiting_curve_grows_with_kappa() {
    let rule = gauss_hermite(120).unwrap();
    let levels: Vec<f64> = (1..50).map(|i| 0.5 + 0.01 * i as f64).collect();
    let mut prev = vec![0.0; levels.len()];
    for kappa in [0.01, 0.05, 0.1, 0.25] {
        let s = solve(&Logistic, kappa, 1.0, &opts()).unwrap();
        let curve = curve_at_solution(&Logistic, &s, &levels, &rule).unwrap();
        for (v, p) in curve.values.iter().zip(&prev) {
            assert!(v > p);
        }
        prev = curve.values;
    }
}

#[test]
fn first_order_coefficient_matches_limit_slope() {
    let rule = gauss_hermite(120).unwrap();
    for (fam, levels) in [
        (&Logistic as &dyn ActivationFamily, vec![0.55, 0.7, 0.9]),
        (&Underconf, vec![0.505]),
    ] {
        let coeffs = expansion_coefficients(fam, 1.0, &rule).unwrap();
        let kappa = 1e-4;
        let s = solve(fam, kappa, 1.0, &opts()).unwrap();
        let curve = curve_at_solution(fam, &s, &levels, &rule).unwrap();
        for (p, v) in curve.iter() {
            let cp = cp_from_coefficients(fam, &coeffs, p).unwrap();
            assert!(
                (v / kappa - cp).abs() <= 0.05 * cp.abs(),
                "{} p={p}: {} vs {cp}",
                fam.name(),
                v / kappa
            );
        }
    }
}

#[test]
fn first_order_curve_is_scaled_coefficient() {
    let rule = gauss_hermite(120).unwrap();
    let levels = [0.6, 0.8];
    let curve = first_order_curve(&Logistic, 0.1, 1.0, &levels, &rule).unwrap();
    assert_eq!(curve.kind, CurveKind::FirstOrder);
    for (p, v) in curve.iter() {
        let cp = cp_coefficient(&Logistic, 1.0, p, &rule).unwrap();
        assert!((v - 0.1 * cp).abs() < 1e-15);
    }
}

#[test]
fn limiting_curve_vanishes_at_half() {
    let curve = limiting_curve(&Logistic, 0.1, 1.0, &[0.5], &opts()).unwrap();
    assert_eq!(curve.values[0].abs(), 0.0);
}

#[test]
fn ce_limit_grows_with_kappa() {
    let a = ce_limit(&Logistic, 0.01, 1.0, &opts()).unwrap();
    let b = ce_limit(&Logistic, 0.1, 1.0, &opts()).unwrap();
    assert!(a > 0.0 && b > a);
    let u = ce_limit(&Underconf, 0.01, 1.0, &opts()).unwrap();
    assert!(u > 0.0);
}

#[test]
fn ce_outer_order_doubling() {
    let s = solve(&Logistic, 0.05, 1.0, &opts()).unwrap();
    let rule = gauss_hermite(120).unwrap();
    let a = asymptotics::ce_at(&Logistic, 1.0, s.r_star, s.c_star, &rule, 240).unwrap();
    let b = asymptotics::ce_at(&Logistic, 1.0, s.r_star, s.c_star, &rule, 480).unwrap();
    assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
}

#[test]
fn beyond_range_reports_diagnostics() {
    match solve(&Logistic, 0.9, 1.0, &opts()) {
        Err(e @ Error::SolveFailed { .. }) => {
            assert!(e.is_numerical());
            assert!(e.to_string().contains("kappa"));
        }
        other => panic!("expected SolveFailed, got {other:?}"),
    }
}
