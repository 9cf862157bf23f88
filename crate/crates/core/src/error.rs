use thiserror::Error;

/// Errors produced by the numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The requested level lies outside the open range attained by the activation.
    #[error("activation `{family}` cannot be inverted at p = {p}")]
    NonInvertible { family: String, p: f64 },

    /// An integrand produced NaN or an infinity at some quadrature node.
    #[error("integrand is not finite at node {node}")]
    NonFinite { node: f64 },

    /// An iterative solver ran out of iterations.
    #[error("{what} did not converge after {iterations} iterations (best residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The fixed-point solver failed; carries the best iterate seen.
    #[error(
        "fixed-point solve failed at kappa = {kappa} (best residual {best_residual:e}, \
         last iterate alpha_bar = {}, sigma_bar = {}, lambda_bar = {}); kappa is likely \
         beyond the solvable range for this family and gamma",
        last_iterate[0], last_iterate[1], last_iterate[2]
    )]
    SolveFailed {
        kappa: f64,
        best_residual: f64,
        last_iterate: [f64; 3],
    },

    #[error("unknown activation family `{0}`")]
    UnknownFamily(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures of iterative numerics as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. } | Error::SolveFailed { .. } | Error::NonFinite { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
