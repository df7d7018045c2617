//! First Dirichlet eigenpair of the p-Laplacian by nonlinear inverse power
//! iteration, and the Hopf comparison constants `c1 δ <= φ₁ <= c2 δ`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::grid::{distance_field, Grid};
use crate::plap::{apply_plap, solve_dirichlet_from, PlapOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Stop once successive eigenvalue estimates differ by less than this.
    pub tol: f64,
    /// Also require `max |(-Δ_p φ) - λ φ^{p-1}| <= residual_tol * λ`, unless
    /// the residual has stopped improving.
    pub residual_tol: f64,
    pub max_iters: usize,
    pub plap: PlapOptions,
}

impl EigenOptions {
    pub fn for_exponent(p: f64) -> Self {
        EigenOptions {
            tol: 1e-10,
            residual_tol: 1e-9,
            max_iters: 500,
            plap: PlapOptions::for_exponent(p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub p: f64,
    pub lambda_p: f64,
    /// Positive in the interior, zero on the boundary, sup-norm one.
    pub phi1: ScalarField,
    /// `max |(-Δ_p φ₁) - λ φ₁^{p-1}|` over interior nodes.
    pub rayleigh_residual: f64,
    pub lambda_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HopfConstants {
    pub c1: f64,
    pub c2: f64,
}

/// `∫|∇u|^p / ∫|u|^p` on the shared stencil and quadrature.
pub fn rayleigh_quotient(field: &ScalarField, p: f64) -> Result<f64> {
    let den = field.lq_norm(p)?.powf(p);
    if den == 0.0 {
        return Err(Error::arg("field", "Rayleigh quotient of the zero field"));
    }
    Ok(field.gradient_seminorm_p(p) / den)
}

fn signed_pow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

/// Inverse power iteration `-Δ_p u_{k+1} = u_k^{p-1}`, renormalized to
/// sup-norm one after each solve, with the eigenvalue read off the
/// Rayleigh quotient. Starts from the distance function.
pub fn eigenpair(grid: &Arc<Grid>, p: f64, opts: &EigenOptions) -> Result<EigenPair> {
    if !(p > 1.0) {
        return Err(Error::arg("p", format!("need p > 1, got {p}")));
    }
    let mut u = distance_field(grid);
    let s = u.linf_norm();
    u = u.scaled(1.0 / s);
    let mut lambda = rayleigh_quotient(&u, p)?;
    let mut history = vec![lambda];
    let mut prev_residual = f64::INFINITY;

    for it in 1..=opts.max_iters {
        let rhs = u.map(|v| signed_pow(v, p - 1.0));
        // Warm start: the next iterate is close to u / λ^{1/(p-1)}.
        let guess = u.scaled(lambda.powf(-1.0 / (p - 1.0)));
        let out = solve_dirichlet_from(grid, p, &rhs, Some(&guess), &opts.plap)?;
        if !out.converged {
            return Err(Error::Eigen {
                iterations: it,
                reason: format!("inner solve stalled at residual {:e}", out.final_residual()),
                lambda_history: history,
            });
        }
        let norm = out.solution.linf_norm();
        if !(norm > 0.0) {
            return Err(Error::Eigen {
                iterations: it,
                reason: "iterate collapsed to zero".into(),
                lambda_history: history,
            });
        }
        u = out.solution.scaled(1.0 / norm);
        let next = rayleigh_quotient(&u, p)?;
        history.push(next);
        let settled = (next - lambda).abs() < opts.tol * lambda.max(1.0);
        lambda = next;
        let residual = eigen_residual(&u, lambda, p, &opts.plap)?;
        let stalled = residual > 0.9 * prev_residual;
        prev_residual = residual;
        if settled && (residual <= opts.residual_tol * lambda || stalled) {
            if let Some(node) = grid.interior_nodes().find(|&i| !(u.values()[i] > 0.0)) {
                return Err(Error::Eigen {
                    iterations: it,
                    reason: format!("eigenfunction not positive at node {node}"),
                    lambda_history: history,
                });
            }
            let rayleigh_residual = residual;
            return Ok(EigenPair {
                p,
                lambda_p: lambda,
                phi1: u,
                rayleigh_residual,
                lambda_history: history,
            });
        }
    }
    Err(Error::Eigen {
        iterations: opts.max_iters,
        reason: "eigenvalue estimate did not settle".into(),
        lambda_history: history,
    })
}

fn eigen_residual(u: &ScalarField, lambda: f64, p: f64, opts: &PlapOptions) -> Result<f64> {
    let lp = apply_plap(u, p, opts)?;
    Ok(u.grid()
        .interior_nodes()
        .map(|i| (lp.values()[i] - lambda * signed_pow(u.values()[i], p - 1.0)).abs())
        .fold(0.0, f64::max))
}

/// `c1 = min φ₁/δ`, `c2 = max φ₁/δ` over interior nodes.
pub fn hopf_constants(phi1: &ScalarField, delta: &ScalarField) -> Result<HopfConstants> {
    phi1.check_grid(delta)?;
    let grid = phi1.grid();
    let mut c1 = f64::INFINITY;
    let mut c2 = 0.0f64;
    for i in grid.interior_nodes() {
        let (f, d) = (phi1.values()[i], delta.values()[i]);
        if !(f > 0.0) {
            return Err(Error::Hypothesis(format!("φ₁ = {f} is not positive at interior node {i}")));
        }
        let ratio = f / d;
        c1 = c1.min(ratio);
        c2 = c2.max(ratio);
    }
    if !(c1.is_finite() && c2.is_finite() && c1 > 0.0) {
        return Err(Error::arg("phi1", "no interior nodes"));
    }
    Ok(HopfConstants { c1, c2 })
}
