//! Browser bindings for the calibration curves. Every entry point returns a
//! JSON string; errors come back as `{"error": "..."}` so the page never throws.

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use glmcal_core::asymptotics::{check_conditions, cp_from_coefficients, curve_at_solution};
use glmcal_core::{
    expansion_coefficients, family_by_name, finite_w_curve, first_order_curve, gauss_hermite,
    solve, Result, SolverOptions,
};

/// Smaller than the native default to keep slider drags responsive.
pub const DEMO_ORDER: usize = 80;

fn grid(points: usize) -> Vec<f64> {
    let points = points.clamp(2, 400);
    let step = 0.49 / (points - 1) as f64;
    (0..points).map(|i| 0.505 + step * i as f64).collect()
}

fn to_json<T: Serialize>(r: Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(msg: &str) -> String {
    json!({ "error": msg }).to_string()
}

/// Limiting and first-order curves at aspect ratio `kappa`.
pub fn limiting_json(family: &str, kappa: f64, gamma: f64, points: usize) -> String {
    to_json((|| {
        let fam = family_by_name(family)?;
        let rule = gauss_hermite(DEMO_ORDER)?;
        let levels = grid(points);
        let opts = SolverOptions {
            quad_order: DEMO_ORDER,
            ..SolverOptions::default()
        };
        let sol = solve(fam.as_ref(), kappa, gamma, &opts)?;
        let limit = curve_at_solution(fam.as_ref(), &sol, &levels, &rule)?;
        let first = first_order_curve(fam.as_ref(), kappa, gamma, &levels, &rule)?;
        Ok(json!({
            "levels": levels,
            "limiting": limit.values,
            "first_order": first.values,
            "r_star": sol.r_star,
            "c_star": sol.c_star,
        }))
    })())
}

/// Gap curve of a fixed estimator with norm `w_norm` and alignment `cos_theta`.
pub fn finite_w_json(family: &str, gamma: f64, w_norm: f64, cos_theta: f64, points: usize) -> String {
    to_json((|| {
        let fam = family_by_name(family)?;
        let rule = gauss_hermite(DEMO_ORDER)?;
        let levels = grid(points);
        let curve = finite_w_curve(fam.as_ref(), gamma, w_norm, cos_theta, &levels, &rule)?;
        Ok(json!({ "levels": levels, "values": curve.values }))
    })())
}

/// First-order coefficient and sufficient-condition verdict across levels.
pub fn verdicts_json(family: &str, gamma: f64, points: usize) -> String {
    to_json((|| {
        let fam = family_by_name(family)?;
        let rule = gauss_hermite(DEMO_ORDER)?;
        let coef = expansion_coefficients(fam.as_ref(), gamma, &rule)?;
        let levels = grid(points);
        let mut cp = Vec::with_capacity(levels.len());
        let mut verdict = Vec::with_capacity(levels.len());
        for &p in &levels {
            cp.push(cp_from_coefficients(fam.as_ref(), &coef, p)?);
            verdict.push(check_conditions(fam.as_ref(), gamma, p, &rule)?.as_str());
        }
        Ok(json!({ "levels": levels, "cp": cp, "verdict": verdict }))
    })())
}

#[wasm_bindgen(js_name = limitingCurve)]
pub fn limiting_curve(family: &str, kappa: f64, gamma: f64, points: usize) -> String {
    limiting_json(family, kappa, gamma, points)
}

#[wasm_bindgen(js_name = finiteWCurve)]
pub fn finite_w(family: &str, gamma: f64, w_norm: f64, cos_theta: f64, points: usize) -> String {
    finite_w_json(family, gamma, w_norm, cos_theta, points)
}

#[wasm_bindgen(js_name = verdictCurve)]
pub fn verdicts(family: &str, gamma: f64, points: usize) -> String {
    verdicts_json(family, gamma, points)
}
