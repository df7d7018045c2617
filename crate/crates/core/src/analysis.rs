//! Post-hoc checks of a computed solution: weak-form residual, energy
//! identity, integrability of the singular term, level-set tails, and the
//! non-existence thresholds with the sweep consistency test.

use std::sync::Arc;

use serde::Serialize;

use crate::barrier::BarrierParams;
use crate::error::{Error, Result};
use crate::exec::par_map;
use crate::fields::ScalarField;
use crate::grid::{integrate_interior, refinement_trend, Grid, RefinementTrend};
use crate::plap::flux_pairing;
use crate::scheme::{FieldSpec, ProblemSpec, SchemeReport};

/// Centers per axis of the test-bump lattice, at `k/8` of each extent.
pub const BUMP_CENTERS: [f64; 7] = [0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875];
/// Support half-widths, as fractions of the shortest extent.
pub const BUMP_RADII: [f64; 3] = [0.0625, 0.125, 0.25];
/// Relative energy-identity gap allowed for a candidate.
pub const CANDIDATE_ENERGY_GAP: f64 = 0.05;
/// A candidate's interior minimum must exceed this fraction of `‖u‖_∞`.
pub const CANDIDATE_MIN_RATIO: f64 = 1e-6;
/// Collapse: `min u < COLLAPSE_RATIO · min barrier` on the deep interior.
pub const COLLAPSE_RATIO: f64 = 1e-3;
/// The deep interior is `{δ >= COLLAPSE_DEPTH · inradius}`.
pub const COLLAPSE_DEPTH: f64 = 0.5;

/// Data of the equation as fields, with `μ`, `γ`, `p`.
#[derive(Debug, Clone, Copy)]
pub struct Equation<'a> {
    pub p: f64,
    pub gamma: f64,
    pub mu: f64,
    pub a: &'a ScalarField,
    pub f: &'a ScalarField,
}

fn check_positive(u: &ScalarField) -> Result<()> {
    let grid = u.grid();
    match grid.interior_nodes().find(|&i| !(u.values()[i] > 0.0)) {
        Some(node) => Err(Error::Singular {
            node,
            value: u.values()[node],
        }),
        None => Ok(()),
    }
}

/// Tensor hat bumps supported strictly inside the domain.
pub fn test_bumps(grid: &Arc<Grid>) -> Vec<ScalarField> {
    let ext = grid.extents();
    let short = ext.iter().map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
    let dim = grid.dimension();
    let mut centers: Vec<[f64; 2]> = Vec::new();
    for &cx in &BUMP_CENTERS {
        if dim == 1 {
            centers.push([ext[0].0 + cx * (ext[0].1 - ext[0].0), 0.0]);
        } else {
            for &cy in &BUMP_CENTERS {
                centers.push([
                    ext[0].0 + cx * (ext[0].1 - ext[0].0),
                    ext[1].0 + cy * (ext[1].1 - ext[1].0),
                ]);
            }
        }
    }
    let mut out = Vec::new();
    for &rf in &BUMP_RADII {
        let rho = rf * short;
        for c in &centers {
            let inside = (0..dim).all(|d| c[d] - rho > ext[d].0 && c[d] + rho < ext[d].1);
            if !inside {
                continue;
            }
            let bump = ScalarField::from_fn(grid, |_, x| {
                (0..dim).map(|d| (1.0 - (x[d] - c[d]).abs() / rho).max(0.0)).product()
            });
            if bump.linf_norm() > 0.0 {
                out.push(bump);
            }
        }
    }
    out
}

/// `max_φ |⟨|∇u|^{p-2}∇u, ∇φ⟩ + ⟨a u^{-γ}, φ⟩ - μ⟨f, φ⟩| / ‖φ‖_{W^{1,p}}`
/// over [`test_bumps`]. Returns the residual and the number of bumps.
pub fn weak_residual(u: &ScalarField, eq: &Equation, eps_reg: f64) -> Result<(f64, usize)> {
    check_positive(u)?;
    u.check_grid(eq.a)?;
    u.check_grid(eq.f)?;
    let grid = u.grid();
    let bumps = test_bumps(grid);
    let qw = grid.quad_weights();
    let react: Vec<f64> = (0..grid.len())
        .map(|i| {
            if grid.is_boundary(i) {
                0.0
            } else {
                eq.a.values()[i] * u.values()[i].powf(-eq.gamma) - eq.mu * eq.f.values()[i]
            }
        })
        .collect();
    let vals = par_map(&bumps, |phi| -> Result<f64> {
        let flux = flux_pairing(u, phi, eq.p, eps_reg)?;
        let zero: f64 = phi.values().iter().zip(&react).zip(qw).map(|((b, r), w)| b * r * w).sum();
        let norm = (phi.lq_norm(eq.p)?.powf(eq.p) + phi.gradient_seminorm_p(eq.p)).powf(1.0 / eq.p);
        Ok((flux + zero).abs() / norm)
    });
    let mut worst = 0.0f64;
    for v in vals {
        worst = worst.max(v?);
    }
    Ok((worst, bumps.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyIdentity {
    pub gradient_energy: f64,
    /// `∫ a u^{1-γ}` (`∫ a` when `γ = 1`).
    pub reaction: f64,
    pub source: f64,
    /// `lhs - rhs`
    pub gap: f64,
    /// `|gap| / |rhs|`
    pub relative_gap: f64,
}

/// `∫|∇u|^p + ∫ a u^{1-γ} - μ ∫ f u`.
pub fn energy_identity(u: &ScalarField, eq: &Equation) -> Result<EnergyIdentity> {
    u.check_grid(eq.a)?;
    u.check_grid(eq.f)?;
    let grad = u.gradient_seminorm_p(eq.p);
    let reaction = if eq.gamma >= 1.0 {
        integrate_interior(eq.a)?
    } else {
        integrate_interior(&eq.a.zip_map(u, |a, v| a * v.max(0.0).powf(1.0 - eq.gamma))?)?
    };
    let source = eq.mu * integrate_interior(&eq.f.zip_map(u, |f, v| f * v)?)?;
    let gap = grad + reaction - source;
    let relative_gap = if source != 0.0 { gap.abs() / source.abs() } else { gap.abs() };
    Ok(EnergyIdentity {
        gradient_energy: grad,
        reaction,
        source,
        gap,
        relative_gap,
    })
}

/// `∫ a u^{-γ}` over interior nodes.
pub fn singular_integral(u: &ScalarField, a: &ScalarField, gamma: f64) -> Result<f64> {
    u.check_grid(a)?;
    if a.linf_norm() == 0.0 {
        return Ok(0.0);
    }
    check_positive(u)?;
    integrate_interior(&a.zip_map(u, |a, v| if v > 0.0 { a * v.powf(-gamma) } else { 0.0 })?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementStudy {
    pub values: Vec<f64>,
    /// Relative change between the two finest levels.
    pub stability_ratio: f64,
    pub trend: RefinementTrend,
}

/// Stability of a quantity over successive dyadic refinements (coarse first).
pub fn refinement_study(values: &[f64]) -> RefinementStudy {
    let stability_ratio = match values {
        [.., a, b] => (b - a).abs() / b.abs().max(f64::MIN_POSITIVE),
        _ => f64::NAN,
    };
    RefinementStudy {
        values: values.to_vec(),
        stability_ratio,
        trend: refinement_trend(values),
    }
}

/// Non-existence threshold `μ₀*`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Threshold {
    /// `None` when the hypotheses are not met.
    pub mu_star: Option<f64>,
    /// The formula evaluated on the mesh even when inapplicable.
    pub mesh_value: f64,
    pub inapplicable: Option<String>,
    /// `γ < 1`: `(c0, ‖f‖_∞)`; `γ = 1`: `(A, F)`.
    pub terms: (f64, f64),
}

/// Whether the catalog field is bounded.
fn catalog_bounded(spec: &FieldSpec) -> bool {
    match *spec {
        FieldSpec::Const(_) => true,
        FieldSpec::DistPow { alpha, .. } => alpha >= 0.0,
        FieldSpec::DistInv { s, c } => s <= 0.0 || c == 0.0,
        FieldSpec::Table(_) => true,
    }
}

/// Whether the field lies in `L^q`; tables rely on the declared exponent
/// and are assumed integrable enough when none is given.
pub fn catalog_in_lq(spec: &FieldSpec, q: f64, declared: Option<f64>) -> bool {
    match *spec {
        FieldSpec::DistPow { alpha, .. } if alpha < 0.0 => -alpha * q < 1.0,
        FieldSpec::DistInv { s, c } if s > 0.0 && c != 0.0 => s * q < 1.0,
        FieldSpec::Table(_) => declared.map_or(true, |d| d >= q),
        _ => true,
    }
}

/// `γ < 1`: `μ₀* = min(c0/C, λ/C)` with `c0 = inf a`, `C = ‖f‖_∞`.
/// `γ = 1`: `μ₀* = min(pλ, A/F)` with `A = ∫a`, `F = (1/p')∫ f^{p'}`.
pub fn nonexistence_threshold(
    problem: &ProblemSpec,
    a: &ScalarField,
    f: &ScalarField,
    lambda_p: f64,
) -> Result<Threshold> {
    let p = problem.p;
    if problem.gamma < 1.0 {
        let c0 = a.grid().interior_nodes().map(|i| a.values()[i]).fold(f64::INFINITY, f64::min);
        let c = f.linf_norm();
        let mesh_value = (c0 / c).min(lambda_p / c);
        let why = if !(c0 > 0.0) {
            Some(format!("a is not bounded away from zero (inf a = {c0})"))
        } else if !catalog_bounded(&problem.f) {
            Some("f is unbounded".to_string())
        } else {
            None
        };
        Ok(Threshold {
            mu_star: why.is_none().then_some(mesh_value),
            mesh_value,
            inapplicable: why,
            terms: (c0, c),
        })
    } else {
        let pd = p / (p - 1.0);
        let big_a = integrate_interior(a)?;
        let big_f = integrate_interior(&f.map(|v| v.abs().powf(pd)))? / pd;
        let mesh_value = (p * lambda_p).min(big_a / big_f);
        let why = if !(big_a > 0.0) {
            Some("a is trivial".to_string())
        } else if !catalog_in_lq(&problem.f, pd, problem.q) {
            Some(format!("f is not in L^{pd}: F diverges under refinement"))
        } else {
            None
        };
        Ok(Threshold {
            mu_star: why.is_none().then_some(mesh_value),
            mesh_value,
            inapplicable: why,
            terms: (big_a, big_f),
        })
    }
}

/// Outcome of one run, weakest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NoFiniteEnergyCandidate,
    Inconclusive,
    Candidate,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::NoFiniteEnergyCandidate => "no_finite_energy_candidate",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Candidate => "candidate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Consistency {
    pub consistent: bool,
    /// No candidates at all, or no applicable threshold.
    pub vacuous: bool,
    /// `μ` values reported as candidates below `μ₀*`.
    pub violations: Vec<f64>,
}

/// True iff every candidate has `μ >= μ₀*`.
pub fn threshold_consistency(results: &[(f64, Verdict)], mu_star: Option<f64>) -> Consistency {
    let candidates: Vec<f64> = results
        .iter()
        .filter(|(_, v)| *v == Verdict::Candidate)
        .map(|(m, _)| *m)
        .collect();
    let Some(ms) = mu_star else {
        return Consistency {
            consistent: true,
            vacuous: true,
            violations: Vec::new(),
        };
    };
    let violations: Vec<f64> = candidates.iter().copied().filter(|&m| m < ms).collect();
    Consistency {
        consistent: violations.is_empty(),
        vacuous: candidates.is_empty(),
        violations,
    }
}

/// Collapse indicator: on `{δ >= COLLAPSE_DEPTH · inradius}`, the minimum
/// of `u` falls below `COLLAPSE_RATIO` times the barrier minimum there.
/// Returns `(fired, min u, min barrier)`.
pub fn collapse_indicator(u: &ScalarField, barrier: &BarrierParams) -> (bool, f64, f64) {
    let grid = u.grid();
    let depth = COLLAPSE_DEPTH * grid.inradius();
    let deep: Vec<usize> = grid.interior_nodes().filter(|&i| grid.distance(i) >= depth - 1e-12).collect();
    let mu = deep.iter().map(|&i| u.values()[i]).fold(f64::INFINITY, f64::min);
    let mb = deep
        .iter()
        .map(|&i| barrier.barrier_field.values()[i])
        .fold(f64::INFINITY, f64::min);
    let fired = if barrier.degenerate || !(mb > 0.0) {
        !(mu > 0.0)
    } else {
        mu < COLLAPSE_RATIO * mb
    };
    (fired, mu, mb)
}

/// `true` unless the finest weak residual exceeds twice the log-linear
/// trend through the coarser levels (needs three or more levels).
pub fn residual_on_trend(residuals: &[f64]) -> bool {
    let m = residuals.len();
    if m < 3 || residuals.iter().any(|r| !(*r > 0.0)) {
        return true;
    }
    let (a, b) = (residuals[m - 3].ln(), residuals[m - 2].ln());
    let predicted = (2.0 * b - a).exp();
    residuals[m - 1] <= 2.0 * predicted
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerdictInputs {
    pub converged: bool,
    /// An inner solve broke down.
    pub failed: bool,
    pub collapse: bool,
    pub min_interior: f64,
    pub linf: f64,
    pub relative_gap: f64,
    pub residual_on_trend: bool,
}

pub fn classify(v: &VerdictInputs) -> Verdict {
    if v.collapse || v.failed {
        return Verdict::NoFiniteEnergyCandidate;
    }
    let positive = v.min_interior >= CANDIDATE_MIN_RATIO * v.linf && v.linf > 0.0;
    if v.converged && positive && v.relative_gap <= CANDIDATE_ENERGY_GAP && v.residual_on_trend {
        Verdict::Candidate
    } else {
        Verdict::Inconclusive
    }
}

/// Verdict of one scheme run (single mesh, so the trend test is vacuous).
pub fn verdict_for(report: &SchemeReport, eq: &Equation, barrier: &BarrierParams) -> Result<(Verdict, VerdictInputs)> {
    let (collapse, _, _) = collapse_indicator(&report.u, barrier);
    let u = &report.u;
    let min_interior = u.interior_min();
    let relative_gap = if min_interior > 0.0 {
        energy_identity(u, eq)?.relative_gap
    } else {
        f64::INFINITY
    };
    let inputs = VerdictInputs {
        converged: report.converged,
        failed: report.failure.is_some(),
        collapse,
        min_interior,
        linf: u.linf_norm(),
        relative_gap,
        residual_on_trend: true,
    };
    Ok((classify(&inputs), inputs))
}

/// Probe family for the Sobolev constant: sine modes, distance powers and
/// hat bumps.
fn sobolev_probes(grid: &Arc<Grid>) -> Vec<ScalarField> {
    let ext = grid.extents();
    let dim = grid.dimension();
    let mut out = Vec::new();
    for k in 1..=3 {
        out.push(ScalarField::from_fn(grid, |_, x| {
            (0..dim)
                .map(|d| {
                    let t = (x[d] - ext[d].0) / (ext[d].1 - ext[d].0);
                    (k as f64 * std::f64::consts::PI * t).sin()
                })
                .product()
        }));
    }
    for beta in [0.5, 1.0, 2.0] {
        out.push(ScalarField::from_fn(grid, |i, _| grid.distance(i).powf(beta)));
    }
    out.extend(test_bumps(grid).into_iter().step_by(5));
    out
}

/// `max ‖w‖_{p*} / ‖∇w‖_p` over the probe family (`p < N`).
pub fn sobolev_constant_estimate(grid: &Arc<Grid>, p: f64) -> Result<f64> {
    let n = grid.dimension() as f64;
    if p >= n {
        return Err(Error::arg("p", format!("Sobolev exponent needs p < N = {n}")));
    }
    let pstar = n * p / (n - p);
    let probes = sobolev_probes(grid);
    let ratios = par_map(&probes, |w| -> Result<f64> {
        let g = w.gradient_seminorm_p(p).powf(1.0 / p);
        Ok(if g > 0.0 { w.lq_norm(pstar)? / g } else { 0.0 })
    });
    let mut best = 0.0f64;
    for r in ratios {
        best = best.max(r?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRecord {
    pub k: f64,
    pub measure: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub records: Vec<TailRecord>,
    pub sobolev_constant: f64,
    /// `-slope` of `log |{u >= k}|` against `log k` over the fit window.
    pub fitted_exponent: f64,
    /// `N(p-1)/(N-p)`
    pub theoretical_exponent: f64,
    pub fit_window: (f64, f64),
}

/// Level-set tails against `(K^p μ ‖f‖₁ / k^{p-1})^{N/(N-p)}`. The exponent
/// is fitted on `k` between the mean of `u` and `0.95 ‖u‖_∞`. `p < N` only.
pub fn marcinkiewicz_tails(u: &ScalarField, p: f64, mu: f64, f: &ScalarField) -> Result<TailReport> {
    let grid = u.grid();
    let n = grid.dimension() as f64;
    if p >= n {
        return Err(Error::Hypothesis(format!("tail estimate needs p < N (p = {p}, N = {n})")));
    }
    let k_const = sobolev_constant_estimate(grid, p)?;
    let f1 = f.lq_norm(1.0)?;
    let top = u.linf_norm();
    if !(top > 0.0) {
        return Err(Error::arg("u", "zero field has no tails"));
    }
    let mean = integrate_interior(u)? / grid.measure();
    let ladder: Vec<f64> = (0..=24).map(|j| top * 2f64.powf(-(24 - j) as f64 / 4.0)).collect();
    let expo = n / (n - p);
    let records: Vec<TailRecord> = ladder
        .iter()
        .map(|&k| TailRecord {
            k,
            measure: u.tail_measure(k),
            bound: (k_const.powf(p) * mu * f1 / k.powf(p - 1.0)).powf(expo),
        })
        .collect();
    let (lo, hi) = (mean.max(1e-300), 0.95 * top);
    let pts: Vec<(f64, f64)> = (0..=40)
        .map(|j| lo * (hi / lo).powf(j as f64 / 40.0))
        .map(|k| (k, u.tail_measure(k)))
        .filter(|&(_, m)| m > 0.0)
        .map(|(k, m)| (k.ln(), m.ln()))
        .collect();
    let fitted_exponent = if pts.len() >= 2 && hi > lo {
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        -sxy / sxx
    } else {
        f64::NAN
    };
    Ok(TailReport {
        records,
        sobolev_constant: k_const,
        fitted_exponent,
        theoretical_exponent: n * (p - 1.0) / (n - p),
        fit_window: (lo, hi),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub weak_residual: f64,
    pub n_test: usize,
    pub energy: EnergyIdentity,
    pub singular_integral: f64,
    pub threshold: Threshold,
    pub tails: Option<TailReport>,
    pub verdict: Verdict,
    pub verdict_inputs: VerdictInputs,
}

/// All single-mesh checks for a finished run.
pub fn analyze(
    problem: &ProblemSpec,
    a: &ScalarField,
    f: &ScalarField,
    barrier: &BarrierParams,
    report: &SchemeReport,
) -> Result<AnalysisReport> {
    let eq = Equation {
        p: problem.p,
        gamma: problem.gamma,
        mu: report.mu,
        a,
        f,
    };
    let (verdict, verdict_inputs) = verdict_for(report, &eq, barrier)?;
    let positive = report.u.interior_min() > 0.0;
    let (weak_residual, n_test) = if positive {
        weak_residual(&report.u, &eq, problem.plap.grad_regularization)?
    } else {
        (f64::NAN, 0)
    };
    let energy = energy_identity(&report.u, &eq)?;
    let singular_integral = if positive {
        singular_integral(&report.u, a, problem.gamma)?
    } else {
        f64::INFINITY
    };
    let threshold = nonexistence_threshold(problem, a, f, barrier.lambda_p)?;
    let tails = if problem.p < a.grid().dimension() as f64 && positive {
        Some(marcinkiewicz_tails(&report.u, problem.p, report.mu, f)?)
    } else {
        None
    };
    Ok(AnalysisReport {
        weak_residual,
        n_test,
        energy,
        singular_integral,
        threshold,
        tails,
        verdict,
        verdict_inputs,
    })
}

impl AnalysisReport {
    /// Re-classifies with the weak residuals of coarser meshes (coarse
    /// first) so that the trend test applies.
    pub fn apply_trend(&mut self, coarser: &[f64]) {
        let mut all = coarser.to_vec();
        all.push(self.weak_residual);
        self.verdict_inputs.residual_on_trend = residual_on_trend(&all);
        self.verdict = classify(&self.verdict_inputs);
    }
}
