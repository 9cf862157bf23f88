//! Monte-Carlo harness: realizable Gaussian data, full-batch gradient-descent
//! ERM, empirical calibration curves and binned reliability tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationFamily;
use crate::asymptotics::{finite_w_curve, CalibrationCurve};
use crate::error::{Error, Result};
use crate::fixed_point::{solve, SolverOptions};
use crate::quadrature::GaussHermiteRule;

/// Name of the generator behind every dataset, recorded in outputs.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.9, seed_from_u64 + set_stream)";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub d: usize,
    pub n: usize,
    pub gamma: f64,
    pub w_star: Vec<f64>,
    /// Row-major `n × d`.
    pub x: Vec<f64>,
    /// Labels in `{0, 1}`; soft labels in `[0, 1]` after [`Self::with_soft_labels`].
    pub y: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
}

impl SyntheticDataset {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    /// Replace each label with its conditional mean `σ(w★·xᵢ)`.
    pub fn with_soft_labels<F: ActivationFamily + ?Sized>(mut self, fam: &F) -> Self {
        for i in 0..self.n {
            let m = self.gamma * self.x[i * self.d];
            self.y[i] = fam.sigma(m);
        }
        self
    }
}

/// Draw `n` rows `x ~ N(0, I_d)` and labels `y ~ Bernoulli(σ(w★·x))` with
/// `w★ = γ e₁`.
pub fn generate<F: ActivationFamily + ?Sized>(
    fam: &F,
    d: usize,
    n: usize,
    gamma: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    generate_stream(fam, d, n, gamma, seed, 0)
}

/// As [`generate`], on an independent stream of the same seed.
pub fn generate_stream<F: ActivationFamily + ?Sized>(
    fam: &F,
    d: usize,
    n: usize,
    gamma: f64,
    seed: u64,
    stream: u64,
) -> Result<SyntheticDataset> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "need d >= 1 and n >= 1, got d={d}, n={n}"
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let start = x.len();
        x.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let prob = fam.sigma(gamma * x[start]);
        y.push(if rng.random::<f64>() < prob { 1.0 } else { 0.0 });
    }
    let mut w_star = vec![0.0; d];
    w_star[0] = gamma;
    Ok(SyntheticDataset {
        d,
        n,
        gamma,
        w_star,
        x,
        y,
        seed,
        stream,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub step: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Record the objective every this many iterations; 0 disables the trace.
    pub record_every: usize,
    /// Return the last iterate instead of an error when the cap is hit.
    pub accept_unconverged: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            step: 0.01,
            tol: 1e-5,
            max_iter: 2_000_000,
            record_every: 0,
            accept_unconverged: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErmFit {
    pub w_hat: Vec<f64>,
    pub w_hat_norm: f64,
    pub cos_theta_hat: f64,
    pub grad_norm_final: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(iteration, empirical risk)` pairs.
    pub objective_trace: Vec<(usize, f64)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four partial sums let the compiler vectorize the reduction.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Gradient of `R̂(w) = (1/n) Σ ρ(w·xᵢ) − yᵢ w·xᵢ` in one pass over the rows;
/// the risk itself is accumulated when `with_loss` is set.
fn gradient<F: ActivationFamily + ?Sized>(
    fam: &F,
    data: &SyntheticDataset,
    w: &[f64],
    grad: &mut [f64],
    with_loss: bool,
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for i in 0..data.n {
        let row = data.row(i);
        let m = dot(row, w);
        let r = fam.sigma(m) - data.y[i];
        for (g, xi) in grad.iter_mut().zip(row) {
            *g += r * xi;
        }
        if with_loss {
            loss += fam.rho(m) - data.y[i] * m;
        }
    }
    let inv_n = 1.0 / data.n as f64;
    grad.iter_mut().for_each(|g| *g *= inv_n);
    loss * inv_n
}

/// Empirical risk at `w`.
pub fn empirical_risk<F: ActivationFamily + ?Sized>(
    fam: &F,
    data: &SyntheticDataset,
    w: &[f64],
) -> f64 {
    let mut g = vec![0.0; data.d];
    gradient(fam, data, w, &mut g, true)
}

/// `(‖w‖, cos∠(w, w★))`.
pub fn alignment(w: &[f64], w_star: &[f64]) -> (f64, f64) {
    let nw = norm(w);
    let ns = norm(w_star);
    let c = if nw > 0.0 && ns > 0.0 {
        (dot(w, w_star) / (nw * ns)).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    (nw, c)
}

/// Full-batch gradient descent from `w = 0` until `‖∇R̂‖ < tol`.
pub fn fit_erm<F: ActivationFamily + ?Sized>(
    fam: &F,
    data: &SyntheticDataset,
    options: &FitOptions,
) -> Result<ErmFit> {
    if data.n <= data.d {
        return Err(Error::InvalidArgument(format!(
            "ERM needs n > d, got n={}, d={}",
            data.n, data.d
        )));
    }
    if !(options.step > 0.0) || !(options.tol > 0.0) {
        return Err(Error::InvalidArgument(
            "step and tol must be positive".into(),
        ));
    }
    let mut w = vec![0.0; data.d];
    let mut grad = vec![0.0; data.d];
    let mut trace = Vec::new();
    let mut iterations = 0;
    let records = |it: usize| options.record_every > 0 && it.is_multiple_of(options.record_every);

    let loss = gradient(fam, data, &w, &mut grad, records(0));
    if records(0) {
        trace.push((0, loss));
    }
    let mut gnorm = norm(&grad);
    while gnorm >= options.tol && iterations < options.max_iter {
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= options.step * gi;
        }
        iterations += 1;
        let rec = records(iterations);
        let loss = gradient(fam, data, &w, &mut grad, rec);
        if rec {
            trace.push((iterations, loss));
        }
        gnorm = norm(&grad);
        if !gnorm.is_finite() {
            return Err(Error::NonFinite { node: gnorm });
        }
    }
    let converged = gnorm < options.tol;
    if !converged && !options.accept_unconverged {
        return Err(Error::NoConvergence {
            what: "gradient descent",
            iterations,
            residual: gnorm,
        });
    }
    if options.record_every > 0 && trace.last().map(|t| t.0) != Some(iterations) {
        trace.push((iterations, empirical_risk(fam, data, &w)));
    }
    let (w_hat_norm, cos_theta_hat) = alignment(&w, &data.w_star);
    Ok(ErmFit {
        w_hat: w,
        w_hat_norm,
        cos_theta_hat,
        grad_norm_final: gnorm,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Closed-form calibration curve of a fitted model.
pub fn empirical_curve<F: ActivationFamily + ?Sized>(
    fam: &F,
    fit: &ErmFit,
    gamma: f64,
    levels: &[f64],
    rule: &GaussHermiteRule,
) -> Result<CalibrationCurve> {
    if fit.w_hat_norm == 0.0 {
        return Err(Error::InvalidArgument("fit has zero weight vector".into()));
    }
    finite_w_curve(fam, gamma, fit.w_hat_norm, fit.cos_theta_hat, levels, rule)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSummary {
    pub family: String,
    pub kappa: f64,
    pub gamma: f64,
    pub d: usize,
    pub n: usize,
    pub replicas: usize,
    pub seed: u64,
    pub r_star: f64,
    pub c_star: f64,
    pub norms: Vec<f64>,
    pub cosines: Vec<f64>,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub cos_mean: f64,
    pub cos_std: f64,
    /// `|mean − R★| / (std/√replicas)`.
    pub norm_z: f64,
    pub cos_z: f64,
    /// Both z-scores below 4.
    pub agrees: bool,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn z_score(mean: f64, std: f64, replicas: usize, target: f64) -> f64 {
    let se = std / (replicas as f64).sqrt();
    if se > 0.0 {
        (mean - target).abs() / se
    } else if mean == target {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Fit replica `r` of a `(seed, d, n)` configuration; replicas use disjoint
/// RNG streams.
pub fn fit_replica<F: ActivationFamily + ?Sized>(
    fam: &F,
    d: usize,
    n: usize,
    gamma: f64,
    seed: u64,
    replica: u64,
    options: &FitOptions,
) -> Result<ErmFit> {
    let data = generate_stream(fam, d, n, gamma, seed, replica)?;
    fit_erm(fam, &data, options)
}

/// Compare replica means of `(‖ŵ‖, cos θ̂)` with `(R★, c★)`.
#[allow(clippy::too_many_arguments)]
pub fn concentration_check<F: ActivationFamily + ?Sized>(
    fam: &F,
    kappa: f64,
    gamma: f64,
    d: usize,
    replicas: usize,
    seed: u64,
    fit_options: &FitOptions,
    solver_options: &SolverOptions,
) -> Result<ConcentrationSummary> {
    if !(kappa > 0.0) || replicas == 0 {
        return Err(Error::InvalidArgument(format!(
            "need kappa > 0 and replicas >= 1, got {kappa}, {replicas}"
        )));
    }
    let n = (d as f64 / kappa).round() as usize;
    if n <= d {
        return Err(Error::InvalidArgument(format!(
            "n = round(d/kappa) = {n} must exceed d = {d}"
        )));
    }
    let limit = solve(fam, kappa, gamma, solver_options)?;
    let run = |r: u64| fit_replica(fam, d, n, gamma, seed, r, fit_options);

    #[cfg(feature = "parallel")]
    let fits: Vec<Result<ErmFit>> = {
        use rayon::prelude::*;
        (0..replicas as u64).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let fits: Vec<Result<ErmFit>> = (0..replicas as u64).map(run).collect();

    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let norms: Vec<f64> = fits.iter().map(|f| f.w_hat_norm).collect();
    let cosines: Vec<f64> = fits.iter().map(|f| f.cos_theta_hat).collect();
    let (norm_mean, norm_std) = mean_std(&norms);
    let (cos_mean, cos_std) = mean_std(&cosines);
    let norm_z = z_score(norm_mean, norm_std, replicas, limit.r_star);
    let cos_z = z_score(cos_mean, cos_std, replicas, limit.c_star);
    Ok(ConcentrationSummary {
        family: fam.name().to_string(),
        kappa,
        gamma,
        d,
        n,
        replicas,
        seed,
        r_star: limit.r_star,
        c_star: limit.c_star,
        norms,
        cosines,
        norm_mean,
        norm_std,
        cos_mean,
        cos_std,
        norm_z,
        cos_z,
        agrees: norm_z < 4.0 && cos_z < 4.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedReliability {
    /// `bins + 1` equally spaced edges over `[0.5, 1]`.
    pub bin_edges: Vec<f64>,
    pub bin_counts: Vec<usize>,
    /// `None` for empty bins.
    pub avg_confidence: Vec<Option<f64>>,
    pub avg_accuracy: Vec<Option<f64>>,
}

impl BinnedReliability {
    pub fn bins(&self) -> usize {
        self.bin_counts.len()
    }

    /// `confidence − accuracy` per bin.
    pub fn gaps(&self) -> Vec<Option<f64>> {
        self.avg_confidence
            .iter()
            .zip(&self.avg_accuracy)
            .map(|(c, a)| Some((*c)? - (*a)?))
            .collect()
    }
}

/// Reliability table of `σ(ŵ·x)` on held-out data. Confidence is the top
/// probability `max(f, 1 − f)`; accuracy compares the thresholded prediction
/// with the label.
pub fn binned_reliability<F: ActivationFamily + ?Sized>(
    fam: &F,
    fit: &ErmFit,
    test_data: &SyntheticDataset,
    bins: usize,
) -> Result<BinnedReliability> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need bins >= 2, got {bins}")));
    }
    if fit.w_hat.len() != test_data.d {
        return Err(Error::InvalidArgument(format!(
            "fit has dimension {}, test data {}",
            fit.w_hat.len(),
            test_data.d
        )));
    }
    let width = 0.5 / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|k| 0.5 + width * k as f64).collect();
    let mut counts = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for i in 0..test_data.n {
        let f = fam.sigma(dot(test_data.row(i), &fit.w_hat));
        let conf = f.max(1.0 - f);
        let k = (((conf - 0.5) / width) as usize).min(bins - 1);
        let predicted = f >= 0.5;
        let label = test_data.y[i] >= 0.5;
        counts[k] += 1;
        conf_sum[k] += conf;
        if predicted == label {
            hits[k] += 1;
        }
    }
    let avg = |s: f64, c: usize| if c > 0 { Some(s / c as f64) } else { None };
    Ok(BinnedReliability {
        bin_edges,
        avg_confidence: (0..bins).map(|k| avg(conf_sum[k], counts[k])).collect(),
        avg_accuracy: (0..bins).map(|k| avg(hits[k] as f64, counts[k])).collect(),
        bin_counts: counts,
    })
}
