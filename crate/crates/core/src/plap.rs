//! Discrete p-Laplacian and the Dirichlet solver for `-Δ_p w = g`.
//!
//! The operator is the gradient of the discrete energy
//! `(1/p) Σ_cells |cell| (|∇_h w|² + ε²)^{p/2}` divided by the nodal
//! quadrature weight, so `⟨-Δ_p w, v⟩ = Σ_cells |cell| F(∇_h w)·∇_h v`
//! holds exactly for `v` vanishing on the boundary.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::grid::Grid;
use crate::linalg::BandedSpd;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlapOptions {
    /// `ε` in the regularized flux `(|∇w|² + ε²)^{(p-2)/2} ∇w`.
    pub grad_regularization: f64,
    pub max_newton_iters: usize,
    /// Max-norm tolerance on the nodal residual `-Δ_p w - g`.
    pub newton_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl PlapOptions {
    /// Defaults for exponent `p`: regularization `1e-8` when the flux is
    /// singular at zero gradient (`p < 2`), none otherwise.
    pub fn for_exponent(p: f64) -> Self {
        PlapOptions {
            grad_regularization: if p < 2.0 { 1e-8 } else { 0.0 },
            max_newton_iters: 200,
            newton_tol: 1e-9,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grad_regularization >= 0.0) {
            return Err(Error::arg("grad_regularization", "must be >= 0"));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::arg("newton_tol", "must be > 0"));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) || !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::arg("line_search", "parameters must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub solution: ScalarField,
    pub residual_history: Vec<f64>,
    pub energy_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl SolveOutcome {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::arg("p", format!("need p > 1, got {p}")));
    }
    Ok(())
}

#[inline]
fn flux(g: [f64; 2], p: f64, eps: f64) -> [f64; 2] {
    let s = g[0] * g[0] + g[1] * g[1] + eps * eps;
    if s == 0.0 {
        return [0.0, 0.0];
    }
    let c = s.powf(0.5 * (p - 2.0));
    [c * g[0], c * g[1]]
}

/// Nodal `-Δ_p w` on interior nodes, zero on the boundary.
pub fn apply_plap(w: &ScalarField, p: f64, opts: &PlapOptions) -> Result<ScalarField> {
    check_p(p)?;
    let grid = w.grid();
    let mut out = vec![0.0; grid.len()];
    accumulate_flux_divergence(grid, w.values(), p, opts.grad_regularization, &mut out);
    let qw = grid.quad_weights();
    for i in 0..grid.len() {
        out[i] = if grid.is_boundary(i) { 0.0 } else { out[i] / qw[i] };
    }
    ScalarField::from_values(grid, out)
}

/// `out[a] += Σ_cells |cell| F(∇w)·c_a`, the energy gradient before division
/// by the nodal weights.
fn accumulate_flux_divergence(grid: &Grid, w: &[f64], p: f64, eps: f64, out: &mut [f64]) {
    for c in grid.cells() {
        let f = flux(c.gradient(w), p, eps);
        for k in 0..c.arity {
            out[c.nodes[k]] += c.weight * (f[0] * c.coef[k][0] + f[1] * c.coef[k][1]);
        }
    }
}

/// Discrete energy `(1/p) Σ |cell| (|∇w|²+ε²)^{p/2} - Σ m_i g_i w_i`.
pub fn energy(w: &ScalarField, g: &ScalarField, p: f64, opts: &PlapOptions) -> f64 {
    let grid = w.grid();
    energy_raw(grid, w.values(), g.values(), p, opts.grad_regularization)
}

fn energy_raw(grid: &Grid, w: &[f64], g: &[f64], p: f64, eps: f64) -> f64 {
    let e2 = eps * eps;
    let mut e = 0.0;
    for c in grid.cells() {
        let gr = c.gradient(w);
        e += c.weight * (gr[0] * gr[0] + gr[1] * gr[1] + e2).powf(0.5 * p) / p;
    }
    let qw = grid.quad_weights();
    for i in grid.interior_nodes() {
        e -= qw[i] * g[i] * w[i];
    }
    e
}

/// `⟨F(∇_h w), ∇_h v⟩`, the discrete weak form of the operator.
pub fn flux_pairing(w: &ScalarField, v: &ScalarField, p: f64, eps: f64) -> Result<f64> {
    w.check_grid(v)?;
    Ok(w.grid()
        .cells()
        .iter()
        .map(|c| {
            let f = flux(c.gradient(w.values()), p, eps);
            let gv = c.gradient(v.values());
            c.weight * (f[0] * gv[0] + f[1] * gv[1])
        })
        .sum())
}

/// Interior unknown numbering and Hessian band structure for a grid.
struct Layout {
    unknown: Vec<Option<usize>>,
    nodes: Vec<usize>,
    bw: usize,
}

impl Layout {
    fn new(grid: &Grid) -> Self {
        let mut unknown = vec![None; grid.len()];
        let mut nodes = Vec::new();
        for i in grid.interior_nodes() {
            unknown[i] = Some(nodes.len());
            nodes.push(i);
        }
        let mut bw = 0;
        for c in grid.cells() {
            for a in 0..c.arity {
                for b in 0..c.arity {
                    if let (Some(ia), Some(ib)) = (unknown[c.nodes[a]], unknown[c.nodes[b]]) {
                        bw = bw.max(ia.abs_diff(ib));
                    }
                }
            }
        }
        Layout { unknown, nodes, bw }
    }
}

/// Assembles the (modified) Hessian of the discrete energy at `w`.
///
/// `floor2` bounds `|∇w|² + ε²` from below inside the flux derivative so
/// the matrix stays positive definite where the operator degenerates.
fn assemble_hessian(
    grid: &Grid,
    layout: &Layout,
    w: &[f64],
    p: f64,
    eps: f64,
    floor2: f64,
    h: &mut BandedSpd,
) {
    h.clear();
    for c in grid.cells() {
        let g = c.gradient(w);
        let s = (g[0] * g[0] + g[1] * g[1] + eps * eps).max(floor2);
        let a = s.powf(0.5 * (p - 2.0));
        let b = if p == 2.0 { 0.0 } else { (p - 2.0) * s.powf(0.5 * (p - 4.0)) };
        let k = [
            [a + b * g[0] * g[0], b * g[0] * g[1]],
            [b * g[1] * g[0], a + b * g[1] * g[1]],
        ];
        for ia in 0..c.arity {
            let Some(ua) = layout.unknown[c.nodes[ia]] else { continue };
            let ca = c.coef[ia];
            let kca = [k[0][0] * ca[0] + k[0][1] * ca[1], k[1][0] * ca[0] + k[1][1] * ca[1]];
            for ib in 0..=ia {
                let Some(ub) = layout.unknown[c.nodes[ib]] else { continue };
                let cb = c.coef[ib];
                let v = c.weight * (kca[0] * cb[0] + kca[1] * cb[1]);
                if ib == ia {
                    h.add(ua, ua, v);
                } else if ua == ub {
                    h.add(ua, ua, 2.0 * v);
                } else {
                    h.add(ua, ub, v);
                }
            }
        }
    }
}

/// Solves `-Δ_p w = g` in the domain, `w = 0` on the boundary, by damped
/// Newton on the convex discrete energy, starting from the `p = 2` solution.
pub fn solve_dirichlet(grid: &Arc<Grid>, p: f64, g: &ScalarField, opts: &PlapOptions) -> Result<SolveOutcome> {
    solve_dirichlet_from(grid, p, g, None, opts)
}

/// As [`solve_dirichlet`] with an explicit initial iterate (boundary values
/// are reset to zero).
pub fn solve_dirichlet_from(
    grid: &Arc<Grid>,
    p: f64,
    g: &ScalarField,
    initial: Option<&ScalarField>,
    opts: &PlapOptions,
) -> Result<SolveOutcome> {
    check_p(p)?;
    opts.validate()?;
    if !g.same_grid(&ScalarField::zeros(grid)) {
        return Err(Error::GridMismatch);
    }
    for i in grid.interior_nodes() {
        let v = g.values()[i];
        if !v.is_finite() {
            return Err(Error::NonFinite { node: i, value: v });
        }
    }
    let layout = Layout::new(grid);
    let n = layout.nodes.len();
    let mut hess = BandedSpd::zeros(n, layout.bw.max(1));
    let qw = grid.quad_weights();
    let eps = opts.grad_regularization;

    let mut w = match initial {
        Some(init) => {
            g.check_grid(init)?;
            init.clone().with_zero_boundary().into_values()
        }
        None => {
            // p = 2 solve: one linear system.
            let zero = vec![0.0; grid.len()];
            assemble_hessian(grid, &layout, &zero, 2.0, 0.0, 0.0, &mut hess);
            let mut rhs: Vec<f64> = layout.nodes.iter().map(|&i| qw[i] * g.values()[i]).collect();
            if !hess.factor() {
                return Err(Error::arg("grid", "Laplacian not positive definite"));
            }
            hess.solve_factored(&mut rhs);
            let mut w0 = vec![0.0; grid.len()];
            for (k, &i) in layout.nodes.iter().enumerate() {
                w0[i] = rhs[k];
            }
            w0
        }
    };

    let mut newton = Newton {
        grid,
        layout: &layout,
        hess,
        g: g.values(),
        p,
        opts,
    };

    // Singular flux (p < 2): continuation in the regularization, from the
    // gradient scale of the initial iterate down to the requested value.
    let mut stages = Vec::new();
    if p < 2.0 {
        let scale = mean_square_gradient(grid, &w).sqrt();
        let mut e = scale;
        while e > 10.0 * eps.max(1e-300) && e > 0.0 {
            stages.push(e);
            e *= 0.1;
        }
    }
    let g_scale = g.linf_norm().max(1.0);
    let mut iterations = 0;
    for stage_eps in stages {
        let tol = (1e-6 * g_scale).max(opts.newton_tol);
        let st = newton.run(&mut w, stage_eps, tol, opts.max_newton_iters / 4 + 1);
        iterations += st.iterations;
    }
    let st = newton.run(&mut w, eps, opts.newton_tol, opts.max_newton_iters.saturating_sub(iterations).max(1));
    iterations += st.iterations;

    Ok(SolveOutcome {
        solution: ScalarField::from_values(grid, w)?,
        residual_history: st.residuals,
        energy_history: st.energies,
        converged: st.converged,
        iterations,
    })
}

fn mean_square_gradient(grid: &Grid, w: &[f64]) -> f64 {
    grid.cells()
        .iter()
        .map(|c| {
            let gr = c.gradient(w);
            gr[0] * gr[0] + gr[1] * gr[1]
        })
        .sum::<f64>()
        / grid.cells().len() as f64
}

struct Newton<'a> {
    grid: &'a Grid,
    layout: &'a Layout,
    hess: BandedSpd,
    g: &'a [f64],
    p: f64,
    opts: &'a PlapOptions,
}

struct Stage {
    residuals: Vec<f64>,
    energies: Vec<f64>,
    converged: bool,
    iterations: usize,
}

impl Newton<'_> {
    /// Nodal residual max-norm; fills `grad` with the energy gradient.
    fn residual(&self, w: &[f64], eps: f64, grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|v| *v = 0.0);
        accumulate_flux_divergence(self.grid, w, self.p, eps, grad);
        let qw = self.grid.quad_weights();
        let mut r = 0.0f64;
        for &i in &self.layout.nodes {
            grad[i] -= qw[i] * self.g[i];
            r = r.max((grad[i] / qw[i]).abs());
        }
        r
    }

    /// Damped Newton with Armijo backtracking on the energy with
    /// regularization `eps`.
    fn run(&mut self, w: &mut Vec<f64>, eps: f64, tol: f64, max_iters: usize) -> Stage {
        let (grid, p, opts) = (self.grid, self.p, self.opts);
        let nodes = &self.layout.nodes;
        let mut grad = vec![0.0; grid.len()];
        let mut res = self.residual(w, eps, &mut grad);
        let mut e = energy_raw(grid, w, self.g, p, eps);
        let mut st = Stage {
            residuals: vec![res],
            energies: vec![e],
            converged: res <= tol,
            iterations: 0,
        };
        let mut trial = w.clone();
        let mut trial_grad = vec![0.0; grid.len()];

        while !st.converged && st.iterations < max_iters {
            st.iterations += 1;
            let floor2 = if p > 2.0 || eps == 0.0 {
                (1e-6 * mean_square_gradient(grid, w)).max(1e-300)
            } else {
                0.0
            };
            assemble_hessian(grid, self.layout, w, p, eps, floor2, &mut self.hess);
            // A one-ulp change of w moves the residual by about this much;
            // below it the residual is not resolvable.
            let qw = grid.quad_weights();
            let roundoff = nodes
                .iter()
                .enumerate()
                .map(|(k, &i)| 8.0 * f64::EPSILON * w[i].abs() * self.hess.diag(k) / qw[i])
                .fold(0.0, f64::max);
            if res <= roundoff {
                st.converged = true;
                st.iterations -= 1;
                break;
            }
            if !self.hess.factor() {
                break;
            }
            let mut dir: Vec<f64> = nodes.iter().map(|&i| -grad[i]).collect();
            self.hess.solve_factored(&mut dir);
            let slope: f64 = nodes.iter().zip(&dir).map(|(&i, d)| grad[i] * d).sum();
            if !(slope < 0.0) {
                break;
            }

            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=opts.max_backtracks {
                trial.copy_from_slice(w);
                for (k, &i) in nodes.iter().enumerate() {
                    trial[i] += alpha * dir[k];
                }
                let et = energy_raw(grid, &trial, self.g, p, eps);
                if et <= e + opts.armijo * alpha * slope {
                    accepted = true;
                    e = et;
                    break;
                }
                // Roundoff regime: the energy no longer resolves the
                // decrease; accept a step that reduces the residual.
                if (et - e).abs() <= 1e-13 * e.abs().max(1e-300) {
                    let rt = self.residual(&trial, eps, &mut trial_grad);
                    if rt < res {
                        accepted = true;
                        e = et.min(e);
                        break;
                    }
                }
                alpha *= opts.backtrack;
            }
            if !accepted {
                break;
            }
            std::mem::swap(w, &mut trial);
            res = self.residual(w, eps, &mut grad);
            st.residuals.push(res);
            st.energies.push(e);
            st.converged = res <= tol;
        }
        st
    }
}

/// `true` iff `u1 <= u2 + tol` at every node.
pub fn comparison_test(u1: &ScalarField, u2: &ScalarField, tol: f64) -> Result<bool> {
    u1.check_grid(u2)?;
    Ok(u1.values().iter().zip(u2.values()).all(|(&a, &b)| a <= b + tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Arc<Grid> {
        Grid::interval(0.0, 1.0, n).unwrap()
    }

    fn parabola(g: &Arc<Grid>) -> ScalarField {
        ScalarField::from_fn(g, |_, x| x[0] * (1.0 - x[0]))
    }

    #[test]
    fn laplacian_of_parabola_is_two() {
        let g = line(21);
        let r = apply_plap(&parabola(&g), 2.0, &PlapOptions::for_exponent(2.0)).unwrap();
        for i in g.interior_nodes() {
            assert!((r.values()[i] - 2.0).abs() < 1e-9);
        }
        assert_eq!(r.values()[0], 0.0);
    }

    #[test]
    fn five_point_stencil_in_2d() {
        let g = Grid::rectangle((0.0, 1.0), (0.0, 1.0), 9, 9).unwrap();
        let u = ScalarField::from_fn(&g, |_, x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]));
        let r = apply_plap(&u, 2.0, &PlapOptions::for_exponent(2.0)).unwrap();
        let h = 0.125;
        for i in g.interior_nodes() {
            let v = u.values();
            let five = (4.0 * v[i] - v[i - 1] - v[i + 1] - v[i - 9] - v[i + 9]) / (h * h);
            assert!((r.values()[i] - five).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_and_homogeneity() {
        let g = line(33);
        for p in [1.5, 2.0, 3.0] {
            let opts = PlapOptions { grad_regularization: 0.0, ..PlapOptions::for_exponent(p) };
            let z = apply_plap(&ScalarField::zeros(&g), p, &opts).unwrap();
            assert_eq!(z.linf_norm(), 0.0);
            let w = ScalarField::from_fn(&g, |_, x| (3.0 * x[0]).sin() * x[0] * (1.0 - x[0]));
            let c = 2.7f64;
            let a = apply_plap(&w.scaled(c), p, &opts).unwrap();
            let b = apply_plap(&w, p, &opts).unwrap().scaled(c.powf(p - 1.0));
            for i in 0..g.len() {
                assert!((a.values()[i] - b.values()[i]).abs() <= 1e-9 * (1.0 + b.values()[i].abs()));
            }
        }
        assert!(apply_plap(&ScalarField::zeros(&g), 1.0, &PlapOptions::for_exponent(2.0)).is_err());
    }

    #[test]
    fn summation_by_parts_is_exact() {
        let g = Grid::rectangle((0.0, 1.0), (0.0, 2.0), 11, 13).unwrap();
        let w = ScalarField::from_fn(&g, |_, x| (x[0] * 2.0).sin() * (x[1] + 0.3).cos()).with_zero_boundary();
        let v = ScalarField::from_fn(&g, |_, x| x[0] * x[1] + 1.0).with_zero_boundary();
        for p in [1.5, 2.0, 3.5] {
            let opts = PlapOptions::for_exponent(p);
            let a = apply_plap(&w, p, &opts).unwrap();
            let lhs: f64 = (0..g.len()).map(|i| g.quad_weights()[i] * a.values()[i] * v.values()[i]).sum();
            let rhs = flux_pairing(&w, &v, p, opts.grad_regularization).unwrap();
            assert!((lhs - rhs).abs() < 1e-11 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn solves_poisson_exactly_for_quadratics() {
        let g = line(65);
        let out = solve_dirichlet(&g, 2.0, &ScalarField::constant(&g, 2.0), &PlapOptions::for_exponent(2.0)).unwrap();
        assert!(out.converged);
        let err = out.solution.zip_map(&parabola(&g), |a, b| a - b).unwrap().linf_norm();
        assert!(err < 1e-10);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = line(33);
        for p in [1.5, 2.0, 3.0] {
            let out = solve_dirichlet(&g, p, &ScalarField::zeros(&g), &PlapOptions::for_exponent(p)).unwrap();
            assert!(out.converged);
            assert!(out.solution.linf_norm() < 1e-12);
        }
    }

    #[test]
    fn p3_closed_form_midpoint() {
        let g = line(513);
        let out = solve_dirichlet(&g, 3.0, &ScalarField::constant(&g, 1.0), &PlapOptions::for_exponent(3.0)).unwrap();
        assert!(out.converged, "{:?}", out.residual_history);
        let mid = out.solution.values()[256];
        assert!((mid - (2.0 / 3.0) * 0.5f64.powf(1.5)).abs() < 1e-4);
    }

    #[test]
    fn energy_decreases_along_newton() {
        let g = line(129);
        for p in [1.5, 3.0, 4.0] {
            let rhs = ScalarField::from_fn(&g, |_, x| 1.0 + 5.0 * x[0]);
            let out = solve_dirichlet(&g, p, &rhs, &PlapOptions::for_exponent(p)).unwrap();
            assert!(out.converged);
            for w in out.energy_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
            }
        }
    }

    #[test]
    fn handles_sign_changing_data() {
        let g = line(101);
        let rhs = ScalarField::from_fn(&g, |_, x| if x[0] < 0.2 { -30.0 } else { 4.0 });
        let out = solve_dirichlet(&g, 1.5, &rhs, &PlapOptions::for_exponent(1.5)).unwrap();
        assert!(out.converged);
        assert!(out.solution.interior_min() < 0.0);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let g = line(101);
        let opts = PlapOptions { max_newton_iters: 1, newton_tol: 1e-300, ..PlapOptions::for_exponent(3.0) };
        let out = solve_dirichlet(&g, 3.0, &ScalarField::constant(&g, 1.0), &opts).unwrap();
        assert!(!out.converged);
        assert!(out.residual_history.len() <= out.iterations + 1);
    }

    #[test]
    fn comparison_examples() {
        let g = line(65);
        let opts = PlapOptions::for_exponent(2.0);
        let base = ScalarField::from_fn(&g, |_, x| (7.0 * x[0]).sin());
        let lo = solve_dirichlet(&g, 2.0, &base, &opts).unwrap().solution;
        let hi = solve_dirichlet(&g, 2.0, &base.map(|v| v + 1.0), &opts).unwrap().solution;
        assert!(comparison_test(&lo, &hi, 1e-10).unwrap());
        assert!(!comparison_test(&hi, &lo, 1e-10).unwrap());
        assert!(comparison_test(&lo, &lo, 0.0).unwrap());
        let other = line(33);
        assert_eq!(comparison_test(&lo, &ScalarField::zeros(&other), 0.0), Err(Error::GridMismatch));
    }
}
