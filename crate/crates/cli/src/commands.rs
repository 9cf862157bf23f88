use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{json, Value};

use glmcal_core::asymptotics::{ce_at, cp_from_coefficients, curve_at_solution, default_levels};
use glmcal_core::report::{
    curve_rows, fmt_real, json_record, reliability_rows, write_curve_csv,
    write_reliability_csv, write_table, CurveCsvWriter, CurveRow, ReliabilityRow, RunTag,
};
use glmcal_core::simulator::{generate_stream, RNG_ALGORITHM};
use glmcal_core::{
    binned_reliability, check_conditions, empirical_curve, expansion_coefficients, fit_erm,
    first_order_curve, gauss_hermite, ActivationFamily, CalibrationCurve, ErmFit,
    FitOptions, GaussHermiteRule, LimitSolution, SolverOptions,
};

use crate::args::{
    Common, CurveArgs, CurveChoice, FitArgs, Format, LevelArgs, Levels, SimulateArgs, SolveArgs,
    SolverArgs, SweepArgs,
};
use crate::output::Target;
use crate::AppError;

type Res<T = ()> = Result<T, AppError>;

const SWEEP_KAPPAS: [f64; 4] = [0.01, 0.05, 0.1, 0.25];

/// Stream index of the held-out set drawn for reliability tables.
const TEST_STREAM: u64 = 1 << 32;

fn family(common: &Common) -> Arc<dyn ActivationFamily> {
    common.family.family()
}

fn rule(common: &Common) -> Res<Arc<GaussHermiteRule>> {
    Ok(gauss_hermite(common.quad_order)?)
}

fn solver_options(common: &Common, solver: &SolverArgs) -> SolverOptions {
    SolverOptions {
        quad_order: common.quad_order,
        tol: solver.tol,
        ladder_start: solver.ladder_start,
        ..SolverOptions::default()
    }
}

fn fit_options(fit: &FitArgs) -> FitOptions {
    FitOptions {
        step: fit.step,
        tol: fit.grad_tol,
        max_iter: fit.max_iter,
        ..FitOptions::default()
    }
}

fn parse_grid(spec: &str) -> Res<Vec<f64>> {
    if spec == "default" {
        return Ok(default_levels());
    }
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| AppError::Usage(format!("--p-grid '{spec}': {e}")))?;
    let [start, stop, step] = parts[..] else {
        return Err(AppError::Usage(format!(
            "--p-grid expects start:stop:step or 'default', got '{spec}'"
        )));
    };
    if !(step > 0.0) || !(start > 0.0) || !(stop < 1.0) || start > stop {
        return Err(AppError::Usage(format!(
            "--p-grid needs 0 < start <= stop < 1 and step > 0, got '{spec}'"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| start + step * i as f64).collect())
}

fn levels(l: &Levels) -> Res<Vec<f64>> {
    let mut out = l.p.clone();
    if let Some(spec) = &l.p_grid {
        out.extend(parse_grid(spec)?);
    }
    if out.is_empty() {
        out = default_levels();
    }
    Ok(out)
}

fn parse_seeds(spec: &str) -> Res<Vec<u64>> {
    let bad = |e: std::num::ParseIntError| AppError::Usage(format!("--seeds '{spec}': {e}"));
    if spec.contains(',') {
        spec.split(',').map(|s| s.trim().parse().map_err(bad)).collect()
    } else {
        let count: u64 = spec.trim().parse().map_err(bad)?;
        if count == 0 {
            return Err(AppError::Usage("--seeds must be at least 1".into()));
        }
        Ok((0..count).collect())
    }
}

fn solution_json(s: &LimitSolution) -> Value {
    serde_json::to_value(s).expect("solution serializes")
}

pub fn solve(a: &SolveArgs) -> Res {
    let fam = family(&a.common);
    let target = Target::new(&a.common, "solve", Format::Json);
    let s = glmcal_core::solve(fam.as_ref(), a.kappa, a.common.gamma, &solver_options(&a.common, &a.solver))?;
    match target.format {
        Format::Json => target.write_json(&json_record("solve", &s)?),
        Format::Csv => {
            let ladder: Vec<String> = s.solver_path.iter().map(|k| fmt_real(*k)).collect();
            let row = vec![
                s.family.clone(),
                fmt_real(s.kappa),
                fmt_real(s.gamma),
                fmt_real(s.alpha_star),
                fmt_real(s.sigma_star),
                fmt_real(s.lambda_star),
                fmt_real(s.r_star),
                fmt_real(s.c_star),
                fmt_real(s.residual_norm),
                s.newton_iterations.to_string(),
                s.quad_order.to_string(),
                ladder.join(";"),
            ];
            let header = [
                "family", "kappa", "gamma", "alpha_star", "sigma_star", "lambda_star", "r_star",
                "c_star", "residual_norm", "newton_iterations", "quad_order", "kappa_ladder",
            ];
            Ok(write_table(target.writer()?, &header, &[row])?)
        }
    }
}

pub fn expand(a: &LevelArgs) -> Res {
    let fam = family(&a.common);
    let rule = rule(&a.common)?;
    let target = Target::new(&a.common, "expand", Format::Json);
    let c = expansion_coefficients(fam.as_ref(), a.common.gamma, &rule)?;
    let levels = levels(&a.levels)?;
    let cps = levels
        .iter()
        .map(|&p| cp_from_coefficients(fam.as_ref(), &c, p))
        .collect::<Result<Vec<_>, _>>()?;
    match target.format {
        Format::Json => {
            let rows: Vec<Value> = levels
                .iter()
                .zip(&cps)
                .map(|(p, cp)| json!({ "p": p, "cp": cp }))
                .collect();
            let body = json!({
                "family": fam.name(),
                "coefficients": c,
                "drift": c.drift(),
                "levels": rows,
            });
            target.write_json(&json_record("expand", &body)?)
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = levels
                .iter()
                .zip(&cps)
                .map(|(p, cp)| {
                    vec![
                        fmt_real(*p),
                        fmt_real(*cp),
                        fmt_real(c.alpha_bar0),
                        fmt_real(c.sigma_bar0_sq),
                        fmt_real(c.lambda_bar0),
                        fmt_real(c.gamma),
                        fam.name().to_string(),
                    ]
                })
                .collect();
            let header = ["p", "cp", "alpha_bar0", "sigma_bar0_sq", "lambda_bar0", "gamma", "family"];
            Ok(write_table(target.writer()?, &header, &rows)?)
        }
    }
}

pub fn check(a: &LevelArgs) -> Res {
    let fam = family(&a.common);
    let rule = rule(&a.common)?;
    let target = Target::new(&a.common, "check", Format::Json);
    let c = expansion_coefficients(fam.as_ref(), a.common.gamma, &rule)?;
    let levels = levels(&a.levels)?;
    let mut rows = Vec::with_capacity(levels.len());
    for &p in &levels {
        let verdict = check_conditions(fam.as_ref(), a.common.gamma, p, &rule)?;
        let cp = cp_from_coefficients(fam.as_ref(), &c, p)?;
        rows.push((p, verdict, cp));
    }
    match target.format {
        Format::Json => {
            let verdicts: Vec<Value> = rows
                .iter()
                .map(|(p, v, cp)| json!({ "p": p, "verdict": v.as_str(), "cp": cp }))
                .collect();
            let body = json!({
                "family": fam.name(),
                "gamma": a.common.gamma,
                "e_q_sigma_second": c.e_q_sigma_second,
                "verdicts": verdicts,
            });
            target.write_json(&json_record("check", &body)?)
        }
        Format::Csv => {
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|(p, v, cp)| {
                    vec![
                        fmt_real(*p),
                        v.as_str().to_string(),
                        fmt_real(*cp),
                        fmt_real(a.common.gamma),
                        fam.name().to_string(),
                    ]
                })
                .collect();
            Ok(write_table(target.writer()?, &["p", "verdict", "cp", "gamma", "family"], &table)?)
        }
    }
}

pub fn curve(a: &CurveArgs) -> Res {
    let fam = family(&a.common);
    let rule = rule(&a.common)?;
    let target = Target::new(&a.common, "curve", Format::Csv);
    let levels = levels(&a.levels)?;
    let mut curves: Vec<CalibrationCurve> = Vec::new();
    let mut solution = None;
    if a.kind != CurveChoice::FirstOrder {
        let s = glmcal_core::solve(fam.as_ref(), a.kappa, a.common.gamma, &solver_options(&a.common, &a.solver))?;
        curves.push(curve_at_solution(fam.as_ref(), &s, &levels, &rule)?);
        solution = Some(s);
    }
    if a.kind != CurveChoice::Limiting {
        curves.push(first_order_curve(fam.as_ref(), a.kappa, a.common.gamma, &levels, &rule)?);
    }
    match target.format {
        Format::Csv => {
            let rows: Vec<CurveRow> = curves.iter().flat_map(|c| curve_rows(c, None)).collect();
            Ok(write_curve_csv(target.writer()?, &rows)?)
        }
        Format::Json => {
            let body = json!({
                "solution": solution.as_ref().map(solution_json),
                "curves": curves,
            });
            target.write_json(&json_record("curve", &body)?)
        }
    }
}

pub fn ce(a: &SolveArgs) -> Res {
    let fam = family(&a.common);
    let rule = rule(&a.common)?;
    let target = Target::new(&a.common, "ce", Format::Json);
    let s = glmcal_core::solve(fam.as_ref(), a.kappa, a.common.gamma, &solver_options(&a.common, &a.solver))?;
    let value = ce_at(fam.as_ref(), s.gamma, s.r_star, s.c_star, &rule, 2 * a.common.quad_order)?;
    match target.format {
        Format::Json => {
            let body = json!({
                "family": fam.name(),
                "kappa": a.kappa,
                "gamma": a.common.gamma,
                "ce": value,
                "ce_over_kappa": value / a.kappa,
                "solution": solution_json(&s),
            });
            target.write_json(&json_record("ce", &body)?)
        }
        Format::Csv => {
            let row = vec![
                fmt_real(a.kappa),
                fmt_real(a.common.gamma),
                fam.name().to_string(),
                fmt_real(value),
            ];
            Ok(write_table(target.writer()?, &["kappa", "gamma", "family", "ce"], &[row])?)
        }
    }
}

/// Everything produced for one simulated seed.
struct SeedRun {
    tag: RunTag,
    fit: ErmFit,
    curve: CalibrationCurve,
    reliability: Vec<ReliabilityRow>,
}

struct SimConfig<'a> {
    fam: &'a dyn ActivationFamily,
    gamma: f64,
    d: usize,
    n: usize,
    levels: &'a [f64],
    rule: &'a GaussHermiteRule,
    fit: FitOptions,
    bins: usize,
    test_n: usize,
}

fn run_seed(cfg: &SimConfig<'_>, seed: u64, replica: usize) -> glmcal_core::Result<SeedRun> {
    let data = generate_stream(cfg.fam, cfg.d, cfg.n, cfg.gamma, seed, 0)?;
    let fit = fit_erm(cfg.fam, &data, &cfg.fit)?;
    let mut curve = empirical_curve(cfg.fam, &fit, cfg.gamma, cfg.levels, cfg.rule)?;
    let kappa = cfg.d as f64 / cfg.n as f64;
    curve.params.kappa = Some(kappa);
    let tag = RunTag {
        seed,
        d: cfg.d,
        n: cfg.n,
        replica,
    };
    let test = generate_stream(cfg.fam, cfg.d, cfg.test_n, cfg.gamma, seed, TEST_STREAM)?;
    let table = binned_reliability(cfg.fam, &fit, &test, cfg.bins)?;
    let reliability = reliability_rows(&table, cfg.fam.name(), Some(kappa), cfg.gamma, tag);
    Ok(SeedRun {
        tag,
        fit,
        curve,
        reliability,
    })
}

fn fit_json(run: &SeedRun) -> Value {
    json!({
        "seed": run.tag.seed,
        "replica": run.tag.replica,
        "d": run.tag.d,
        "n": run.tag.n,
        "w_hat_norm": run.fit.w_hat_norm,
        "cos_theta_hat": run.fit.cos_theta_hat,
        "grad_norm_final": run.fit.grad_norm_final,
        "iterations": run.fit.iterations,
        "converged": run.fit.converged,
    })
}

fn check_fit_args(fit: &FitArgs, d: usize) -> Res {
    if fit.bins < 2 {
        return Err(AppError::Usage(format!("--bins must be at least 2, got {}", fit.bins)));
    }
    if d == 0 || fit.test_n == 0 {
        return Err(AppError::Usage("--d and --test-n must be positive".into()));
    }
    Ok(())
}

/// Split successes from the first failure, keeping order.
fn partition<T>(results: Vec<glmcal_core::Result<T>>) -> (Vec<T>, Option<glmcal_core::Error>) {
    let mut ok = Vec::new();
    let mut err = None;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                err.get_or_insert(e);
            }
        }
    }
    (ok, err)
}

pub fn simulate(a: &SimulateArgs) -> Res {
    let fam = family(&a.common);
    let rule = rule(&a.common)?;
    let target = Target::new(&a.common, "simulate", Format::Csv);
    check_fit_args(&a.fit, a.d)?;
    let n = match (a.n, a.kappa) {
        (Some(n), _) => n,
        (None, Some(k)) => (a.d as f64 / k).round() as usize,
        (None, None) => return Err(AppError::Usage("simulate needs --n or --kappa".into())),
    };
    if n <= a.d {
        return Err(AppError::Usage(format!("need n > d, got n={n}, d={}", a.d)));
    }
    let seeds = parse_seeds(&a.fit.seeds)?;
    let levels = levels(&a.levels)?;
    let cfg = SimConfig {
        fam: fam.as_ref(),
        gamma: a.common.gamma,
        d: a.d,
        n,
        levels: &levels,
        rule: &rule,
        fit: fit_options(&a.fit),
        bins: a.fit.bins,
        test_n: a.fit.test_n,
    };
    let results: Vec<_> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| run_seed(&cfg, seed, i))
        .collect();
    let (runs, failure) = partition(results);

    match target.format {
        Format::Csv => {
            let rows: Vec<CurveRow> = runs.iter().flat_map(|r| curve_rows(&r.curve, Some(r.tag))).collect();
            let mut w = CurveCsvWriter::new(target.writer()?, true)?;
            w.write_rows(&rows)?;
            if let Some(path) = target.sibling("reliability") {
                let rel: Vec<ReliabilityRow> = runs.iter().flat_map(|r| r.reliability.clone()).collect();
                write_reliability_csv(crate::output::open(Some(&path))?, &rel)?;
            }
        }
        Format::Json => {
            let body = json!({
                "rng": RNG_ALGORITHM,
                "family": fam.name(),
                "gamma": a.common.gamma,
                "d": a.d,
                "n": n,
                "kappa": a.d as f64 / n as f64,
                "fits": runs.iter().map(fit_json).collect::<Vec<_>>(),
                "curves": runs.iter().map(|r| &r.curve).collect::<Vec<_>>(),
                "reliability": runs.iter().map(|r| &r.reliability).collect::<Vec<_>>(),
            });
            target.write_json(&json_record("simulate", &body)?)?;
        }
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

enum Cell {
    Limit(f64),
    Sim(f64, u64, usize),
}

enum CellOut {
    Limit(LimitSolution, CalibrationCurve),
    Sim(SeedRun),
}

pub fn sweep(a: &SweepArgs) -> Res {
    let fam = family(&a.common);
    let rule = rule(&a.common)?;
    let target = Target::new(&a.common, "sweep", Format::Csv);
    check_fit_args(&a.fit, a.d)?;
    let kappas = if a.kappa.is_empty() {
        SWEEP_KAPPAS.to_vec()
    } else {
        a.kappa.clone()
    };
    for &k in &kappas {
        let n = (a.d as f64 / k).round() as usize;
        if n <= a.d {
            return Err(AppError::Usage(format!("κ = {k} gives n = {n} <= d = {}", a.d)));
        }
    }
    let seeds = parse_seeds(&a.fit.seeds)?;
    let levels = levels(&a.levels)?;
    let solver = solver_options(&a.common, &a.solver);
    let fit = fit_options(&a.fit);

    let mut cells = Vec::new();
    for &k in &kappas {
        cells.push(Cell::Limit(k));
        cells.extend(seeds.iter().enumerate().map(|(i, &s)| Cell::Sim(k, s, i)));
    }
    let results: Vec<glmcal_core::Result<CellOut>> = cells
        .par_iter()
        .map(|cell| match *cell {
            Cell::Limit(k) => {
                let s = glmcal_core::solve(fam.as_ref(), k, a.common.gamma, &solver)?;
                let c = curve_at_solution(fam.as_ref(), &s, &levels, &rule)?;
                Ok(CellOut::Limit(s, c))
            }
            Cell::Sim(k, seed, replica) => {
                let cfg = SimConfig {
                    fam: fam.as_ref(),
                    gamma: a.common.gamma,
                    d: a.d,
                    n: (a.d as f64 / k).round() as usize,
                    levels: &levels,
                    rule: &rule,
                    fit,
                    bins: a.fit.bins,
                    test_n: a.fit.test_n,
                };
                run_seed(&cfg, seed, replica).map(CellOut::Sim)
            }
        })
        .collect();
    let (outs, failure) = partition(results);

    // Single ordered writer; successful cells are written even if some failed.
    match target.format {
        Format::Csv => {
            let mut w = CurveCsvWriter::new(target.writer()?, true)?;
            let mut reliability = Vec::new();
            for out in &outs {
                match out {
                    CellOut::Limit(_, c) => w.write_rows(&curve_rows(c, None))?,
                    CellOut::Sim(r) => {
                        w.write_rows(&curve_rows(&r.curve, Some(r.tag)))?;
                        reliability.extend(r.reliability.iter().cloned());
                    }
                }
            }
            if let Some(path) = target.sibling("reliability") {
                write_reliability_csv(crate::output::open(Some(&path))?, &reliability)?;
            }
        }
        Format::Json => {
            let mut limits = Vec::new();
            let mut fits = Vec::new();
            let mut curves = Vec::new();
            for out in &outs {
                match out {
                    CellOut::Limit(s, c) => {
                        limits.push(solution_json(s));
                        curves.push(serde_json::to_value(c).expect("curve serializes"));
                    }
                    CellOut::Sim(r) => {
                        fits.push(fit_json(r));
                        curves.push(json!({ "tag": r.tag, "curve": r.curve }));
                    }
                }
            }
            let body = json!({
                "rng": RNG_ALGORITHM,
                "family": fam.name(),
                "gamma": a.common.gamma,
                "d": a.d,
                "kappas": kappas,
                "limits": limits,
                "fits": fits,
                "curves": curves,
            });
            target.write_json(&json_record("sweep", &body)?)?;
        }
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}
