//! The truncated iterative scheme
//!
//! ```text
//! -Δ_p u_n + a / (|u_{n-1}| + 1/n)^γ = μ f_n,    f_n = T_{n + c_band}(f),
//! ```
//!
//! started from the constant `u_0 = t0 ‖φ₁^r‖_∞`, with per-iteration checks
//! of the barrier, the truncated-energy bound and the upper bound `u_n <= w`.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;

use crate::barrier::{build_barrier, BarrierParams, BarrierRequest};
use crate::eigen::{eigenpair, EigenOptions, EigenPair};
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::grid::{build_grid, distance_field, Grid};
use crate::plap::{solve_dirichlet, solve_dirichlet_from, PlapOptions};

/// Levels of the truncated-energy check, as fractions of `‖u_n‖_∞`.
pub const ENERGY_LADDER: [f64; 4] = [0.1, 0.5, 1.0, 2.0];
pub const DEFAULT_OUTER_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_OUTER_ITERS: usize = 200;

/// Catalog of coefficient fields `a` and `f`.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    Const(f64),
    /// `c δ^α`
    DistPow { c: f64, alpha: f64 },
    /// `c δ^{-s}`, zero on boundary nodes.
    DistInv { c: f64, s: f64 },
    /// A field dump (`x [y] value`) on the run's grid.
    Table(PathBuf),
}

impl FieldSpec {
    pub fn realize(&self, grid: &Arc<Grid>) -> Result<ScalarField> {
        let delta = distance_field(grid);
        let out = match *self {
            FieldSpec::Const(c) => ScalarField::constant(grid, c),
            FieldSpec::DistPow { c, alpha } => delta.map(|d| pow_or_zero(d, alpha) * c),
            FieldSpec::DistInv { c, s } => delta.map(|d| pow_or_zero(d, -s) * c),
            FieldSpec::Table(ref path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                ScalarField::parse_dump(grid, &text)?
            }
        };
        Ok(out)
    }

    /// `Some(c)` when the field is the constant `c`.
    pub fn as_const(&self) -> Option<f64> {
        match *self {
            FieldSpec::Const(c) => Some(c),
            _ => None,
        }
    }
}

/// `d^e`, with negative powers set to zero at `d = 0`.
fn pow_or_zero(d: f64, e: f64) -> f64 {
    if d <= 0.0 {
        if e > 0.0 {
            0.0
        } else if e == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        d.powf(e)
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldSpec::Const(c) => write!(f, "const:{c}"),
            FieldSpec::DistPow { c, alpha } => write!(f, "dpow:{c},{alpha}"),
            FieldSpec::DistInv { c, s } => write!(f, "dinv:{c},{s}"),
            FieldSpec::Table(p) => write!(f, "table:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub extents: Vec<(f64, f64)>,
}

impl Domain {
    pub fn dimension(&self) -> usize {
        self.extents.len()
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.extents.as_slice() {
            [(a, b)] => write!(f, "1d:{a},{b}"),
            [(a, b), (c, d)] => write!(f, "2d:{a},{b},{c},{d}"),
            _ => write!(f, "invalid"),
        }
    }
}

/// One instance of the problem plus its numerical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub p: f64,
    pub gamma: f64,
    pub mu: f64,
    pub a: FieldSpec,
    pub f: FieldSpec,
    pub domain: Domain,
    pub nodes: Vec<usize>,
    /// Declared integrability exponent of `f`.
    pub q: Option<f64>,
    /// Fixed band width; searched when absent.
    pub eps_bar: Option<f64>,
    /// Declared `(α, s)` for `γ = 1`.
    pub growth: Option<(f64, f64)>,
    pub outer_tol: f64,
    pub max_outer_iters: usize,
    pub plap: PlapOptions,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) || !self.p.is_finite() {
            return Err(Error::arg("p", format!("need p > 1, got {}", self.p)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::arg("gamma", format!("need 0 < gamma <= 1, got {}", self.gamma)));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::arg("mu", format!("need mu > 0, got {}", self.mu)));
        }
        if let Some(q) = self.q {
            if !crate::analysis::catalog_in_lq(&self.f, q, Some(q)) {
                return Err(Error::arg("q", format!("f = {} is not in L^{q}", self.f)));
            }
        }
        if self.nodes.len() != self.domain.dimension() {
            return Err(Error::arg("nodes", "one node count per axis is required"));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::arg("outer_tol", "must be > 0"));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::arg("max_outer_iters", "must be >= 1"));
        }
        self.plap.validate()
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        build_grid(self.domain.dimension(), &self.domain.extents, &self.nodes)
    }

    /// The same problem on `levels` dyadic refinements of the mesh.
    pub fn refined(&self, levels: u32) -> ProblemSpec {
        let mut out = self.clone();
        for n in &mut out.nodes {
            *n = (*n - 1) * (1usize << levels) + 1;
        }
        out
    }

    pub fn with_mu(&self, mu: f64) -> ProblemSpec {
        ProblemSpec { mu, ..self.clone() }
    }
}

/// Realized data of a problem on its grid.
#[derive(Debug, Clone)]
pub struct Instance {
    pub grid: Arc<Grid>,
    pub a: ScalarField,
    pub f: ScalarField,
    pub eigen: EigenPair,
    pub barrier: BarrierParams,
}

impl Instance {
    /// Realizes `a`, `f`, the eigenpair and the barrier. None of these
    /// depend on `μ`, so one instance serves a whole sweep.
    pub fn new(problem: &ProblemSpec) -> Result<Instance> {
        problem.validate()?;
        let grid = problem.grid()?;
        let a = problem.a.realize(&grid)?;
        let f = problem.f.realize(&grid)?;
        let mut eopts = EigenOptions::for_exponent(problem.p);
        eopts.plap = problem.plap;
        let eigen = eigenpair(&grid, problem.p, &eopts)?;
        let barrier = build_barrier(
            &a,
            &f,
            &eigen,
            &BarrierRequest {
                gamma: problem.gamma,
                eps_bar: problem.eps_bar,
                growth: problem.growth,
            },
        )?;
        Ok(Instance {
            grid,
            a,
            f,
            eigen,
            barrier,
        })
    }
}

/// `u_0 ≡ t0 ‖φ₁^r‖_∞`.
pub fn initial_iterate(barrier: &BarrierParams, phi1: &ScalarField) -> ScalarField {
    let top = phi1.linf_norm().powf(barrier.r);
    ScalarField::constant(phi1.grid(), barrier.t0 * top)
}

/// `f_n = min(f, n + c_band)`.
pub fn truncated_source(f: &ScalarField, n: usize, c_band: f64) -> Result<ScalarField> {
    if n == 0 {
        return Err(Error::arg("n", "need n >= 1"));
    }
    if !(c_band > 0.0) {
        return Err(Error::arg("c_band", format!("must be positive, got {c_band}")));
    }
    let cap = n as f64 + c_band;
    Ok(f.map(|v| v.min(cap)))
}

/// `f_n >= f̄ (δ + 1/n)^{-s}` on interior band nodes (`γ = 1` path).
pub fn check_truncated_growth(f_n: &ScalarField, n: usize, eps_bar: f64, f_bar: f64, s: f64) -> Result<()> {
    let grid = f_n.grid();
    for i in grid.interior_nodes() {
        let d = grid.distance(i);
        if d >= eps_bar {
            continue;
        }
        let need = f_bar * (d + 1.0 / n as f64).powf(-s);
        if f_n.values()[i] < need * (1.0 - 1e-12) {
            return Err(Error::Hypothesis(format!(
                "f_{n} = {} < f̄ (δ + 1/n)^-s = {need} at node {i}",
                f_n.values()[i]
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub n: usize,
    /// `‖u_n - u_{n-1}‖_∞`
    pub sup_distance: f64,
    /// `min (u_n - t0 φ₁^r)`
    pub barrier_margin: f64,
    /// `∫|∇T_k u_n|^p / (μ k ‖f‖_1)` for `k` in [`ENERGY_LADDER`] `· ‖u_n‖_∞`.
    pub energy_ratios: [f64; 4],
    /// `max (u_n - w_n)` with `-Δ_p w_n = μ f_n`.
    pub upper_excess: f64,
    pub min_interior: f64,
    pub linf: f64,
    /// Nodes where `u_{n-1} < 0` was clamped to zero in the singular term.
    pub clamped_nodes: usize,
    pub inner_iterations: usize,
    pub inner_residual: f64,
}

/// State shared by the steps of one run.
pub struct Scheme<'a> {
    p: f64,
    gamma: f64,
    mu: f64,
    a: &'a ScalarField,
    f: &'a ScalarField,
    f_l1: f64,
    barrier: &'a BarrierParams,
    opts: PlapOptions,
    upper: Option<(ScalarField, ScalarField)>,
}

impl<'a> Scheme<'a> {
    pub fn new(
        p: f64,
        gamma: f64,
        mu: f64,
        a: &'a ScalarField,
        f: &'a ScalarField,
        barrier: &'a BarrierParams,
        opts: PlapOptions,
    ) -> Result<Self> {
        a.check_grid(f)?;
        a.check_grid(&barrier.barrier_field)?;
        let f_l1 = f.lq_norm(1.0)?;
        Ok(Scheme {
            p,
            gamma,
            mu,
            a,
            f,
            f_l1,
            barrier,
            opts,
            upper: None,
        })
    }

    pub fn for_instance(inst: &'a Instance, problem: &ProblemSpec) -> Result<Self> {
        Scheme::new(problem.p, problem.gamma, problem.mu, &inst.a, &inst.f, &inst.barrier, problem.plap)
    }

    /// `w_n` with `-Δ_p w_n = μ f_n`, cached while `f_n` is unchanged.
    fn upper_bound(&mut self, f_n: &ScalarField) -> Result<ScalarField> {
        if let Some((cached_f, w)) = &self.upper {
            if cached_f.values() == f_n.values() {
                return Ok(w.clone());
            }
        }
        let out = solve_dirichlet(f_n.grid(), self.p, &f_n.scaled(self.mu), &self.opts)?;
        if !out.converged {
            return Err(Error::InnerSolve {
                iteration: 0,
                residual: out.final_residual(),
            });
        }
        self.upper = Some((f_n.clone(), out.solution.clone()));
        Ok(out.solution)
    }

    /// One step of the scheme from `u_prev` at index `n >= 1`.
    pub fn step(&mut self, u_prev: &ScalarField, n: usize) -> Result<(ScalarField, StepRecord)> {
        let grid = Arc::clone(u_prev.grid());
        let f_n = truncated_source(self.f, n, self.barrier.c_band)?;
        if let Some(g1) = &self.barrier.gamma1 {
            check_truncated_growth(&f_n, n, self.barrier.eps_bar, g1.f_bar, g1.s)?;
        }
        let inv_n = 1.0 / n as f64;
        let mut clamped = 0;
        let rhs: Vec<f64> = (0..grid.len())
            .map(|i| {
                let prev = u_prev.values()[i];
                if prev < 0.0 {
                    clamped += 1;
                }
                let sing = self.a.values()[i] / (prev.max(0.0) + inv_n).powf(self.gamma);
                self.mu * f_n.values()[i] - sing
            })
            .collect();
        let rhs = ScalarField::from_values(&grid, rhs)?;
        let guess = u_prev.map(|v| v.max(0.0));
        let out = solve_dirichlet_from(&grid, self.p, &rhs, Some(&guess), &self.opts)?;
        if !out.converged {
            return Err(Error::InnerSolve {
                iteration: n,
                residual: out.final_residual(),
            });
        }
        let (inner_iterations, inner_residual) = (out.iterations, out.final_residual());
        let u = out.solution;
        let w = self.upper_bound(&f_n)?;

        let sup_distance = u
            .values()
            .iter()
            .zip(u_prev.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let barrier_margin = u
            .values()
            .iter()
            .zip(self.barrier.barrier_field.values())
            .map(|(a, b)| a - b)
            .fold(f64::INFINITY, f64::min);
        let upper_excess = u
            .values()
            .iter()
            .zip(w.values())
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max);
        let linf = u.linf_norm();
        let mut energy_ratios = [f64::NAN; 4];
        for (slot, frac) in energy_ratios.iter_mut().zip(ENERGY_LADDER) {
            let k = frac * linf;
            if k > 0.0 && self.f_l1 > 0.0 {
                let tk = u.truncate(k)?;
                *slot = tk.gradient_seminorm_p(self.p) / (self.mu * k * self.f_l1);
            }
        }
        let record = StepRecord {
            n,
            sup_distance,
            barrier_margin,
            energy_ratios,
            upper_excess,
            min_interior: u.interior_min(),
            linf,
            clamped_nodes: clamped,
            inner_iterations,
            inner_residual,
        };
        Ok((u, record))
    }
}

/// Free-standing form of [`Scheme::step`].
pub fn scheme_step(
    u_prev: &ScalarField,
    n: usize,
    problem: &ProblemSpec,
    inst: &Instance,
) -> Result<(ScalarField, StepRecord)> {
    Scheme::for_instance(inst, problem)?.step(u_prev, n)
}

#[derive(Debug, Clone)]
pub struct SchemeReport {
    pub mu: f64,
    pub converged: bool,
    pub iterations: usize,
    pub u: ScalarField,
    pub records: Vec<StepRecord>,
    /// Set when an inner solve failed; the run stopped there.
    pub failure: Option<String>,
    /// `u_0, u_1, ...` when requested.
    pub iterates: Vec<ScalarField>,
}

impl SchemeReport {
    pub fn min_barrier_margin(&self) -> f64 {
        self.records.iter().map(|r| r.barrier_margin).fold(f64::INFINITY, f64::min)
    }

    pub fn max_energy_ratio(&self) -> f64 {
        self.records
            .iter()
            .flat_map(|r| r.energy_ratios)
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
    }

    pub fn max_upper_excess(&self) -> f64 {
        self.records.iter().map(|r| r.upper_excess).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runs the scheme on a realized instance.
pub fn run_scheme_on(problem: &ProblemSpec, inst: &Instance, keep_iterates: bool) -> Result<SchemeReport> {
    let mut scheme = Scheme::for_instance(inst, problem)?;
    let mut u = initial_iterate(&inst.barrier, &inst.eigen.phi1);
    let mut iterates = Vec::new();
    if keep_iterates {
        iterates.push(u.clone());
    }
    let mut records = Vec::new();
    let mut converged = false;
    let mut failure = None;
    for n in 1..=problem.max_outer_iters {
        match scheme.step(&u, n) {
            Ok((next, rec)) => {
                let done = rec.sup_distance < problem.outer_tol;
                records.push(rec);
                u = next;
                if keep_iterates {
                    iterates.push(u.clone());
                }
                if done {
                    converged = true;
                    break;
                }
            }
            Err(e @ Error::InnerSolve { .. }) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SchemeReport {
        mu: problem.mu,
        converged,
        iterations: records.len(),
        u,
        records,
        failure,
        iterates,
    })
}

/// Realizes the problem and runs the scheme.
pub fn run_scheme(problem: &ProblemSpec) -> Result<(Instance, SchemeReport)> {
    let inst = Instance::new(problem)?;
    let report = run_scheme_on(problem, &inst, false)?;
    Ok((inst, report))
}
