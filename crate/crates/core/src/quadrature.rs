//! Deterministic Gaussian expectations.
//!
//! Gauss–Hermite rules are normalized against the standard normal density,
//! so `Σ wᵢ f(xᵢ) ≈ E[f(Z)]` with `Z ~ N(0, 1)`. Nodes come from the
//! Golub–Welsch eigenvalue problem and are then polished by Newton steps on
//! the orthonormal three-term recurrence; weights are taken from the
//! Christoffel–Darboux identity in log space so that tail weights keep full
//! relative accuracy instead of underflowing through eigenvector entries.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes per axis used by the fixed-point system unless overridden.
pub const DEFAULT_ORDER: usize = 120;

/// Probabilists' Gauss–Hermite rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermiteRule {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Eigenvalues of the symmetric tridiagonal matrix with zero diagonal.
fn jacobi_eigenvalues(off_diag: impl Fn(usize) -> f64, n: usize) -> Vec<f64> {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = off_diag(k);
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let mut eig = SymmetricEigen::new(jac).eigenvalues.as_slice().to_vec();
    eig.sort_by(|a, b| a.total_cmp(b));
    eig
}

/// Mirror a sorted node/weight list so the rule is exactly symmetric.
fn symmetrize(nodes: &mut [f64], weights: &mut [f64]) {
    let n = nodes.len();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
}

/// Orthonormal Hermite values `(p_n(x), p_{n-1}(x), log_scale)`; the true
/// values are the returned ones times `exp(log_scale)`.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    const BIG: f64 = 1e150;
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut log_scale = 0.0;
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
        if cur.abs() > BIG {
            cur /= BIG;
            prev /= BIG;
            log_scale += BIG.ln();
        }
    }
    (cur, prev, log_scale)
}

impl GaussHermiteRule {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument(
                "quadrature order must be at least 1".into(),
            ));
        }
        let n = order;
        let mut nodes = jacobi_eigenvalues(|k| (k as f64).sqrt(), n);
        let mut weights = vec![0.0; n];
        let sqrt_n = (n as f64).sqrt();
        for (x, w) in nodes.iter_mut().zip(weights.iter_mut()) {
            for _ in 0..6 {
                let (pn, pn1, _) = hermite_orthonormal(n, *x);
                let step = pn / (sqrt_n * pn1);
                *x -= step;
                if step.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, pn1, log_scale) = hermite_orthonormal(n, *x);
            // w = 1 / (n p_{n-1}(x)²)
            *w = (-(n as f64).ln() - 2.0 * (pn1.abs().ln() + log_scale)).exp();
        }
        symmetrize(&mut nodes, &mut weights);
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self {
            order,
            nodes,
            weights,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Shared, lazily built Gauss–Hermite rule of the given order.
pub fn gauss_hermite(order: usize) -> Result<Arc<GaussHermiteRule>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermiteRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().expect("quadrature cache poisoned").get(&order) {
        return Ok(Arc::clone(rule));
    }
    let rule = Arc::new(GaussHermiteRule::new(order)?);
    cache
        .lock()
        .expect("quadrature cache poisoned")
        .insert(order, Arc::clone(&rule));
    Ok(rule)
}

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendreRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendreRule {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument(
                "quadrature order must be at least 1".into(),
            ));
        }
        let n = order;
        let mut nodes = jacobi_eigenvalues(
            |k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            },
            n,
        );
        let mut weights = vec![0.0; n];
        let legendre = |x: f64| {
            let (mut p0, mut p1) = (1.0, x);
            for k in 1..n {
                let k = k as f64;
                let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
                p0 = p1;
                p1 = p2;
            }
            if n == 0 {
                (1.0, 0.0)
            } else {
                // (P_n, P_{n-1}) with P_1 = x when n = 1
                (p1, p0)
            }
        };
        for (x, w) in nodes.iter_mut().zip(weights.iter_mut()) {
            let mut deriv = 1.0;
            for _ in 0..6 {
                let (pn, pn1) = legendre(*x);
                deriv = n as f64 * (*x * pn - pn1) / (*x * *x - 1.0);
                let step = pn / deriv;
                *x -= step;
                if step.abs() <= 1e-16 {
                    break;
                }
            }
            let (pn, pn1) = legendre(*x);
            if pn1 != 0.0 || pn != 0.0 {
                deriv = n as f64 * (*x * pn - pn1) / (*x * *x - 1.0);
            }
            *w = 2.0 / ((1.0 - *x * *x) * deriv * deriv);
        }
        symmetrize(&mut nodes, &mut weights);
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫_a^b f(x) dx`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

/// Shared, lazily built Gauss–Legendre rule of the given order.
pub fn gauss_legendre(order: usize) -> Result<Arc<GaussLegendreRule>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendreRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().expect("quadrature cache poisoned").get(&order) {
        return Ok(Arc::clone(rule));
    }
    let rule = Arc::new(GaussLegendreRule::new(order)?);
    cache
        .lock()
        .expect("quadrature cache poisoned")
        .insert(order, Arc::clone(&rule));
    Ok(rule)
}

/// `Q₁ ~ N(0, γ²)` and `Q₂ = −αQ₁ + √κ σ Z` with `Z ⟂ Q₁` standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BivariateGaussianSpec {
    pub gamma: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub kappa: f64,
}

impl BivariateGaussianSpec {
    pub fn new(gamma: f64, alpha: f64, sigma: f64, kappa: f64) -> Result<Self> {
        let spec = Self {
            gamma,
            alpha,
            sigma,
            kappa,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.kappa >= 0.0) || !self.alpha.is_finite() || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid bivariate spec {self:?}"
            )));
        }
        Ok(())
    }

    /// Covariance of `(Q₁, Q₂)`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let g2 = self.gamma * self.gamma;
        let c = -self.alpha * g2;
        [
            [g2, c],
            [c, self.alpha * self.alpha * g2 + self.kappa * self.sigma * self.sigma],
        ]
    }
}

/// `E[f(X)]` for `X ~ N(mean, std²)`.
pub fn expect_1d<F: FnMut(f64) -> f64>(
    mut f: F,
    mean: f64,
    std: f64,
    rule: &GaussHermiteRule,
) -> Result<f64> {
    if !(std >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "standard deviation must be non-negative, got {std}"
        )));
    }
    if std == 0.0 {
        let v = f(mean);
        return if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { node: mean })
        };
    }
    let mut acc = 0.0;
    for (x, w) in rule.iter() {
        let q = mean + std * x;
        let v = f(q);
        if !v.is_finite() {
            return Err(Error::NonFinite { node: q });
        }
        acc += w * v;
    }
    Ok(acc)
}

/// Standardized half-width of the truncated real line used by
/// [`expect_1d_kinked`]; the normal tail beyond it is below 1e-32.
const KINK_CUTOFF: f64 = 12.0;

/// `E[f(X)]` for `X ~ N(mean, std²)` when `f` is only piecewise smooth.
///
/// With no kinks this is [`expect_1d`]. Otherwise the real line (truncated at
/// 12 standard deviations) is cut at every kink and each panel gets a
/// Gauss–Legendre rule with as many nodes as `rule`.
pub fn expect_1d_kinked<F: FnMut(f64) -> f64>(
    mut f: F,
    mean: f64,
    std: f64,
    kinks: &[f64],
    rule: &GaussHermiteRule,
) -> Result<f64> {
    if kinks.is_empty() || std == 0.0 {
        return expect_1d(f, mean, std, rule);
    }
    if !(std > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "standard deviation must be non-negative, got {std}"
        )));
    }
    let mut cuts = vec![-KINK_CUTOFF];
    let mut inner: Vec<f64> = kinks
        .iter()
        .map(|k| (k - mean) / std)
        .filter(|x| x.abs() < KINK_CUTOFF)
        .collect();
    inner.sort_by(|a, b| a.total_cmp(b));
    cuts.extend(inner);
    cuts.push(KINK_CUTOFF);

    let legendre = gauss_legendre(rule.order())?;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = 0.0;
    let mut bad = None;
    for pair in cuts.windows(2) {
        acc += legendre.integrate(pair[0], pair[1], |x| {
            let q = mean + std * x;
            let v = f(q);
            if !v.is_finite() {
                bad.get_or_insert(q);
            }
            v * (-0.5 * x * x).exp() * norm
        });
    }
    match bad {
        Some(node) => Err(Error::NonFinite { node }),
        None => Ok(acc),
    }
}

/// `E[f(Q₁, Q₂)]` on the tensor-product rule over `(Q₁, Z)`.
pub fn expect_2d<F: FnMut(f64, f64) -> f64>(
    mut f: F,
    spec: &BivariateGaussianSpec,
    rule: &GaussHermiteRule,
) -> Result<f64> {
    spec.validate()?;
    let noise = spec.kappa.sqrt() * spec.sigma;
    let mut acc = 0.0;
    for (x1, w1) in rule.iter() {
        let q1 = spec.gamma * x1;
        let base = -spec.alpha * q1;
        let mut inner = 0.0;
        for (z, w2) in rule.iter() {
            let q2 = base + noise * z;
            let v = f(q1, q2);
            if !v.is_finite() {
                return Err(Error::NonFinite { node: q2 });
            }
            inner += w2 * v;
        }
        acc += w1 * inner;
    }
    Ok(acc)
}
