//! Exact high-dimensional calibration limits for unregularized convex ERM
//! in binary generalized linear models.
//!
//! The crate is organized bottom-up:
//!
//! * [`activation`]: loss/activation families and the inverse activation.
//! * [`prox`]: the scalar proximal map of `λρ` and its derivatives.
//! * [`quadrature`]: Gauss–Hermite expectations in one and two dimensions.
//! * [`fixed_point`]: the three-equation system characterizing the ERM limit.
//! * [`asymptotics`]: small-aspect-ratio expansions, calibration curves, the
//!   CE limit and the over-/under-confidence sufficient conditions.
//! * [`simulator`]: synthetic data, gradient-descent ERM, empirical curves.
//! * [`report`]: CSV/JSON records shared by the command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod asymptotics;
pub mod error;
pub mod fixed_point;
pub mod prox;
pub mod quadrature;
pub mod report;
pub mod simulator;

pub use activation::{
    family_by_name, logistic_family, sigma_inverse, underconf_family, ActivationFamily,
    CustomFamily, FamilyName, Logistic, Underconf,
};
pub use asymptotics::{
    ce_limit, check_conditions, cp_coefficient, expansion_coefficients, finite_w_curve,
    first_order_curve, limiting_curve, CalibrationCurve, CurveKind, CurveParams,
    ExpansionCoefficients, Verdict,
};
pub use error::{Error, Result};
pub use fixed_point::{
    limiting_jacobian, residual_original, residual_rescaled, solve, LimitSolution,
    RescaledPoint, SolverOptions,
};
pub use prox::{prox, ProxResult};
pub use quadrature::{
    expect_1d, expect_2d, gauss_hermite, BivariateGaussianSpec, GaussHermiteRule,
    GaussLegendreRule,
};
pub use simulator::{
    binned_reliability, concentration_check, empirical_curve, fit_erm, generate,
    BinnedReliability, ConcentrationSummary, ErmFit, FitOptions, SyntheticDataset,
};
