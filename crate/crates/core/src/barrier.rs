//! The eigenfunction-power subsolution `v = t0 φ₁^r` and its constants.
//!
//! For `γ < 1` the exponent is `r = p/(p+γ-1) > 1`; for `γ = 1` it is one
//! and the barrier is a multiple of `φ₁` itself, under growth bounds
//! `a <= ā δ^α`, `f >= f̄ δ^{-s}` near the boundary.

use serde::Serialize;

use crate::eigen::{hopf_constants, EigenPair};
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::grid::{boundary_band, distance_field, NodeMask};
use crate::plap::{apply_plap, PlapOptions};

/// Initial band width of the halving search.
pub const EPS_SEARCH_START: f64 = 0.25;
/// The band is never made thinner than this many cells.
pub const EPS_FLOOR_CELLS: f64 = 4.0;
/// Tolerated drift of a fitted growth constant between the first two node
/// layers, as a power of two (`2^0.05`, about 3.5%).
pub const GROWTH_LAYER_SLACK: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct BarrierParams {
    pub p: f64,
    pub gamma: f64,
    pub r: f64,
    pub c_pgamma: f64,
    pub d_pgamma_omega: f64,
    pub lambda_p: f64,
    pub eps_bar: f64,
    /// `true` when `eps_bar` came from [`choose_eps_bar`].
    pub eps_bar_searched: bool,
    pub c_band: f64,
    /// `min |∇_h φ₁|^p` over the band.
    pub c_bar: f64,
    pub t0: f64,
    pub mu0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// `a ≡ 0`: `t0 = mu0 = 0` and the construction is void.
    pub degenerate: bool,
    /// Band conditions at `eps_bar` (`γ < 1` only).
    pub band: Option<BandConditions>,
    pub gamma1: Option<Gamma1Params>,
    #[serde(skip)]
    pub barrier_field: ScalarField,
}

/// The two smallness conditions on the band for `γ < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandConditions {
    /// `max_band φ₁^p - c̄ C / (2D)`; condition (i) holds iff `<= 0`.
    pub claim_margin: f64,
    /// `c3^{-γ} ‖a‖ ε^{rγ} - c3^{p-1} c̄ C / (2 ε^{r(p-1)})`; (ii) iff `<= 0`.
    pub sign_value: f64,
}

impl BandConditions {
    pub fn hold(&self) -> bool {
        self.claim_margin <= 0.0 && self.sign_value <= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gamma1Params {
    pub alpha: f64,
    pub s: f64,
    pub a_bar: f64,
    pub f_bar: f64,
    /// `α + s >= 1`.
    pub compatibility: bool,
    /// `t0 c1 >= 1` at `eps_bar`.
    pub t0c1_ok: bool,
    /// `Ĉ (ε̄^α + (ε̄+1)^s)`, to be compared against `mu0`.
    pub smallness_lhs: f64,
}

pub fn barrier_exponent(p: f64, gamma: f64) -> Result<f64> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::arg("p", format!("need p > 1, got {p}")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::arg("gamma", format!("need 0 < gamma <= 1, got {gamma}")));
    }
    Ok(p / (p + gamma - 1.0))
}

/// `(C_{p,γ}, D_{p,γ,Ω}) = (r^{p-1}(r-1)(p-1), r^{p-1} λ_p)`.
pub fn barrier_constants(p: f64, gamma: f64, lambda_p: f64) -> Result<(f64, f64)> {
    let r = barrier_exponent(p, gamma)?;
    if !(lambda_p > 0.0) {
        return Err(Error::arg("lambda_p", format!("need lambda_p > 0, got {lambda_p}")));
    }
    let rp = r.powf(p - 1.0);
    Ok((rp * (r - 1.0) * (p - 1.0), rp * lambda_p))
}

/// Interior nodes with `δ >= eps`.
fn outside_band(field: &ScalarField, eps: f64) -> Result<NodeMask> {
    let grid = field.grid();
    let mask = boundary_band(grid, eps)?.complement();
    if mask.count() == 0 {
        return Err(Error::arg(
            "eps_bar",
            format!("no nodes with distance >= {eps} (inradius {})", grid.inradius()),
        ));
    }
    Ok(mask)
}

/// Interior nodes with `δ < eps`.
fn inside_band(field: &ScalarField, eps: f64) -> Result<NodeMask> {
    let grid = field.grid();
    let band = boundary_band(grid, eps)?;
    let bits = (0..grid.len()).map(|i| band.contains(i) && !grid.is_boundary(i)).collect();
    Ok(NodeMask::from_bits(bits))
}

/// `min f` over `{δ >= eps_bar}`; errors unless strictly positive.
pub fn essential_inf_outside_band(f: &ScalarField, eps_bar: f64) -> Result<f64> {
    let mask = outside_band(f, eps_bar)?;
    let (node, min) = mask
        .iter()
        .map(|i| (i, f.values()[i]))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    if !(min > 0.0) {
        return Err(Error::Hypothesis(format!(
            "f must be bounded away from zero off the band; f = {min} at node {node}"
        )));
    }
    Ok(min)
}

/// `t0 = (‖a‖_∞ / (D min_{δ>=ε̄} φ₁^p))^{1/(p+γ-1)}`; zero for `a ≡ 0`.
/// With `γ = 1` and `D = λ_p` this is the `γ = 1` variant.
pub fn compute_t0(
    a: &ScalarField,
    phi1: &ScalarField,
    p: f64,
    gamma: f64,
    eps_bar: f64,
    d: f64,
) -> Result<f64> {
    barrier_exponent(p, gamma)?;
    a.check_grid(phi1)?;
    let mask = outside_band(phi1, eps_bar)?;
    let min_phi = phi1.min_over(&mask).unwrap_or(0.0);
    if !(min_phi > 0.0) {
        return Err(Error::arg("phi1", format!("minimum {min_phi} off the band is not positive")));
    }
    if !(d > 0.0) {
        return Err(Error::arg("d", format!("need D > 0, got {d}")));
    }
    Ok((a.linf_norm() / (d * min_phi.powf(p))).powf(1.0 / (p + gamma - 1.0)))
}

/// `mu0 = 2 t0^{p-1} D ‖φ₁‖_∞^{p-rγ} / c_band`.
pub fn compute_mu0(t0: f64, d: f64, phi1: &ScalarField, p: f64, gamma: f64, c_band: f64) -> Result<f64> {
    let r = barrier_exponent(p, gamma)?;
    for (name, v) in [("t0", t0), ("d", d), ("c_band", c_band)] {
        if !(v > 0.0) {
            return Err(Error::arg(name, format!("must be positive, got {v}")));
        }
    }
    Ok(2.0 * t0.powf(p - 1.0) * d * phi1.linf_norm().powf(p - r * gamma) / c_band)
}

/// `min |∇_h φ₁|^p` over interior band nodes.
fn band_gradient_floor(phi1: &ScalarField, p: f64, eps: f64) -> Result<f64> {
    let band = inside_band(phi1, eps)?;
    let g = phi1.nodal_gradient_norm();
    Ok(g.min_over(&band).map(|v| v.powf(p)).unwrap_or(0.0))
}

/// Candidate band widths: `initial, initial/2, ...` while `>= 4h`.
fn halving_sequence(initial: f64, h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = initial;
    while e >= EPS_FLOOR_CELLS * h {
        out.push(e);
        e *= 0.5;
    }
    out
}

/// Result of the band-width search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsBarChoice {
    pub eps_bar: f64,
    pub c_bar: f64,
    pub c3: f64,
    pub c4: f64,
    pub conditions: BandConditions,
    /// `(ε, t0(ε))` over the whole halving sequence.
    pub t0_by_eps: Vec<(f64, f64)>,
}

/// Envelope `c3 <= t0(ε) ε^r <= c4` over the sequence.
fn fit_envelope(t0_by_eps: &[(f64, f64)], r: f64) -> (f64, f64) {
    t0_by_eps.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &(e, t)| {
        let v = t * e.powf(r);
        (lo.min(v), hi.max(v))
    })
}

fn t0_sequence(
    a: &ScalarField,
    eigen: &EigenPair,
    gamma: f64,
    d: f64,
    eps: &[f64],
) -> Result<Vec<(f64, f64)>> {
    eps.iter()
        .map(|&e| Ok((e, compute_t0(a, &eigen.phi1, eigen.p, gamma, e, d)?)))
        .collect()
}

/// Evaluates conditions (i) and (ii) at band width `eps`.
pub fn band_conditions(
    a: &ScalarField,
    eigen: &EigenPair,
    gamma: f64,
    eps: f64,
    c3: f64,
) -> Result<(BandConditions, f64)> {
    let p = eigen.p;
    let r = barrier_exponent(p, gamma)?;
    let (c, d) = barrier_constants(p, gamma, eigen.lambda_p)?;
    let c_bar = band_gradient_floor(&eigen.phi1, p, eps)?;
    let band = inside_band(&eigen.phi1, eps)?;
    let max_phi_p = eigen.phi1.max_over(&band).map(|v| v.powf(p)).unwrap_or(0.0);
    let claim_margin = max_phi_p - c_bar * c / (2.0 * d);
    let sign_value = c3.powf(-gamma) * a.linf_norm() * eps.powf(r * gamma)
        - c3.powf(p - 1.0) * c_bar * c / (2.0 * eps.powf(r * (p - 1.0)));
    Ok((BandConditions { claim_margin, sign_value }, c_bar))
}

/// Largest `ε` in the halving sequence from `initial_eps` (floor `4h`) at
/// which both band conditions hold. `γ < 1` only.
pub fn choose_eps_bar(a: &ScalarField, eigen: &EigenPair, gamma: f64, initial_eps: f64) -> Result<EpsBarChoice> {
    let p = eigen.p;
    let r = barrier_exponent(p, gamma)?;
    if gamma >= 1.0 {
        return Err(Error::arg("gamma", "the band search applies to gamma < 1"));
    }
    if a.linf_norm() == 0.0 {
        return Err(Error::Barrier("a ≡ 0: t0 = 0 and the band search is void".into()));
    }
    let (_, d) = barrier_constants(p, gamma, eigen.lambda_p)?;
    let grid = eigen.phi1.grid();
    let eps = halving_sequence(initial_eps.min(grid.inradius()), grid.h());
    if eps.is_empty() {
        return Err(Error::Barrier(format!("grid too coarse: 4h = {} exceeds {initial_eps}", 4.0 * grid.h())));
    }
    let t0_by_eps = t0_sequence(a, eigen, gamma, d, &eps)?;
    let (c3, c4) = fit_envelope(&t0_by_eps, r);
    for &e in &eps {
        let (conditions, c_bar) = band_conditions(a, eigen, gamma, e, c3)?;
        if conditions.hold() {
            return Ok(EpsBarChoice {
                eps_bar: e,
                c_bar,
                c3,
                c4,
                conditions,
                t0_by_eps,
            });
        }
    }
    Err(Error::Barrier(format!(
        "no band width in [{}, {}] satisfies both band conditions",
        eps[eps.len() - 1],
        eps[0]
    )))
}

/// Nodewise `-Δ_p v + a/(v+1/n)^γ - μ f_n` on interior nodes, zero on the
/// boundary, with `f_n = min(f, n + c_band)`.
#[allow(clippy::too_many_arguments)]
pub fn subsolution_defect(
    v: &ScalarField,
    p: f64,
    gamma: f64,
    a: &ScalarField,
    f: &ScalarField,
    c_band: f64,
    n: usize,
    mu: f64,
    opts: &PlapOptions,
) -> Result<ScalarField> {
    if n == 0 {
        return Err(Error::arg("n", "need n >= 1"));
    }
    v.check_grid(a)?;
    v.check_grid(f)?;
    let lp = apply_plap(v, p, opts)?;
    let cap = n as f64 + c_band;
    let inv_n = 1.0 / n as f64;
    let grid = v.grid();
    let values = (0..grid.len())
        .map(|i| {
            if grid.is_boundary(i) {
                0.0
            } else {
                let fn_i = f.values()[i].min(cap);
                lp.values()[i] + a.values()[i] / (v.values()[i] + inv_n).powf(gamma) - mu * fn_i
            }
        })
        .collect();
    ScalarField::from_values(grid, values)
}

/// Max over interior nodes of [`subsolution_defect`]; `<= 0` certifies the
/// discrete subsolution property.
#[allow(clippy::too_many_arguments)]
pub fn subsolution_residual(
    v: &ScalarField,
    p: f64,
    gamma: f64,
    a: &ScalarField,
    f: &ScalarField,
    c_band: f64,
    n: usize,
    mu: f64,
    opts: &PlapOptions,
) -> Result<f64> {
    let d = subsolution_defect(v, p, gamma, a, f, c_band, n, mu, opts)?;
    Ok(d.grid().interior_nodes().map(|i| d.values()[i]).fold(f64::NEG_INFINITY, f64::max))
}

/// Two evaluations of `-Δ_p(t φ₁^r)`: the stencil, and the closed form
/// `t^{p-1}(-C |∇φ₁|^p φ₁^{-rγ} + D φ₁^{p-rγ})` with the nodal gradient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sub1Check {
    pub h: f64,
    /// Max abs difference over interior nodes with `δ > collar`.
    pub max_abs_diff: f64,
    /// The same, weighted by `φ₁^{rγ}` (removes the boundary blow-up of
    /// both sides).
    pub max_weighted_diff: f64,
    /// Max abs of the closed form over the same nodes, for scale.
    pub scale: f64,
}

pub fn sub1_identity(eigen: &EigenPair, gamma: f64, t: f64, collar_cells: f64) -> Result<Sub1Check> {
    let p = eigen.p;
    let r = barrier_exponent(p, gamma)?;
    let (c, d) = barrier_constants(p, gamma, eigen.lambda_p)?;
    let phi = &eigen.phi1;
    let grid = phi.grid();
    let v = phi.map(|x| t * x.max(0.0).powf(r));
    let stencil = apply_plap(&v, p, &PlapOptions::for_exponent(p))?;
    let grad = phi.nodal_gradient_norm();
    let collar = collar_cells * grid.h();
    let tp = t.powf(p - 1.0);
    let (mut diff, mut wdiff, mut scale) = (0.0f64, 0.0f64, 0.0f64);
    for i in grid.interior_nodes() {
        if grid.distance(i) <= collar * (1.0 + 1e-12) {
            continue;
        }
        let f = phi.values()[i];
        let closed = tp * (-c * grad.values()[i].powf(p) * f.powf(-r * gamma) + d * f.powf(p - r * gamma));
        let e = (stencil.values()[i] - closed).abs();
        diff = diff.max(e);
        wdiff = wdiff.max(e * f.powf(r * gamma));
        scale = scale.max(closed.abs());
    }
    Ok(Sub1Check {
        h: grid.h(),
        max_abs_diff: diff,
        max_weighted_diff: wdiff,
        scale,
    })
}

/// Fits `ā = max a/δ^α` and `f̄ = min(1, min f δ^s)` over interior band
/// nodes. The bounds are unsatisfiable under refinement when the fitted
/// constant still drifts between the first two node layers.
pub fn fit_gamma1_growth(
    a: &ScalarField,
    f: &ScalarField,
    delta: &ScalarField,
    eps_bar: f64,
    alpha: f64,
    s: f64,
) -> Result<Gamma1Params> {
    for (name, v) in [("alpha", alpha), ("s", s)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::arg(name, format!("need a value in (0, 1), got {v}")));
        }
    }
    a.check_grid(f)?;
    a.check_grid(delta)?;
    let grid = a.grid();
    let band = inside_band(a, eps_bar)?;
    if band.count() == 0 {
        return Err(Error::arg("eps_bar", "band contains no interior nodes"));
    }
    let h = grid.h();
    let layer = |i: usize| (delta.values()[i] / h).round() as usize;
    let mut a_fit = [f64::NEG_INFINITY; 3];
    let mut f_fit = [(f64::INFINITY, 0usize); 3];
    let (mut a_bar, mut a_node) = (0.0f64, 0usize);
    let (mut f_min, mut f_node) = (f64::INFINITY, 0usize);
    for i in band.iter() {
        let d = delta.values()[i];
        let ar = a.values()[i] / d.powf(alpha);
        let fr = f.values()[i] * d.powf(s);
        if ar > a_bar {
            a_bar = ar;
            a_node = i;
        }
        if fr < f_min {
            f_min = fr;
            f_node = i;
        }
        let l = layer(i);
        if l <= 2 {
            a_fit[l] = a_fit[l].max(ar);
            if fr < f_fit[l].0 {
                f_fit[l] = (fr, i);
            }
        }
    }
    let drift = 2f64.powf(GROWTH_LAYER_SLACK);
    if a_fit[1] > 0.0 && a_fit[2] > 0.0 && a_fit[1] > drift * a_fit[2] {
        return Err(Error::Hypothesis(format!(
            "a <= ā δ^{alpha} fails under refinement: a/δ^α grows toward the boundary \
             ({} at δ = h vs {} at δ = 2h), worst node {a_node}",
            a_fit[1], a_fit[2]
        )));
    }
    if f_fit[1].0 < f_fit[2].0 / drift {
        return Err(Error::Hypothesis(format!(
            "f >= f̄ δ^-{s} fails under refinement: f δ^s decays toward the boundary \
             ({} at δ = h vs {} at δ = 2h), worst node {}",
            f_fit[1].0, f_fit[2].0, f_fit[1].1
        )));
    }
    if !(f_min > 0.0) {
        return Err(Error::Hypothesis(format!("f δ^s = {f_min} is not positive at node {f_node}")));
    }
    Ok(Gamma1Params {
        alpha,
        s,
        a_bar: a_bar.max(f64::MIN_POSITIVE),
        f_bar: f_min.min(1.0),
        compatibility: alpha + s >= 1.0,
        t0c1_ok: false,
        smallness_lhs: f64::NAN,
    })
}

/// `Ĉ = ā / (f̄ c1^{1-s} c3^{1-s}) + λ c2^{p-1} c4^{p-1} / f̄`.
fn c_tilde(g: &Gamma1Params, lambda: f64, p: f64, c1: f64, c2: f64, c3: f64, c4: f64) -> f64 {
    let e = 1.0 - g.s;
    g.a_bar / (g.f_bar * c1.powf(e) * c3.powf(e)) + lambda * (c2 * c4).powf(p - 1.0) / g.f_bar
}

/// Band width for `γ = 1`: the largest `ε` in the halving sequence with
/// `t0 c1 >= 1` and `Ĉ(ε^α + (ε+1)^s) <= mu0`.
pub fn choose_eps_bar_gamma1(
    a: &ScalarField,
    f: &ScalarField,
    eigen: &EigenPair,
    alpha: f64,
    s: f64,
    initial_eps: f64,
) -> Result<(f64, Gamma1Params)> {
    let p = eigen.p;
    let grid = eigen.phi1.grid();
    let delta = distance_field(grid);
    let hopf = hopf_constants(&eigen.phi1, &delta)?;
    let eps = halving_sequence(initial_eps.min(grid.inradius()), grid.h());
    if eps.is_empty() {
        return Err(Error::Barrier(format!("grid too coarse: 4h = {} exceeds {initial_eps}", 4.0 * grid.h())));
    }
    let t0_by_eps = t0_sequence(a, eigen, 1.0, eigen.lambda_p, &eps)?;
    let (c3, c4) = fit_envelope(&t0_by_eps, 1.0);
    let mut last_err = None;
    for &(e, t0) in &t0_by_eps {
        let mut g = match fit_gamma1_growth(a, f, &delta, e, alpha, s) {
            Ok(g) => g,
            Err(err) => {
                last_err = Some(err);
                continue;
            }
        };
        let c_band = essential_inf_outside_band(f, e)?;
        let mu0 = compute_mu0(t0, eigen.lambda_p, &eigen.phi1, p, 1.0, c_band)?;
        g.t0c1_ok = t0 * hopf.c1 >= 1.0;
        g.smallness_lhs = c_tilde(&g, eigen.lambda_p, p, hopf.c1, hopf.c2, c3, c4) * (e.powf(alpha) + (e + 1.0).powf(s));
        if g.t0c1_ok && g.smallness_lhs <= mu0 {
            return Ok((e, g));
        }
    }
    Err(last_err.unwrap_or_else(|| {
        Error::Barrier(format!(
            "no band width in [{}, {}] satisfies t0 c1 >= 1 and the smallness condition",
            eps[eps.len() - 1],
            eps[0]
        ))
    }))
}

/// What the caller fixes when building a barrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierRequest {
    pub gamma: f64,
    /// Fixed band width; searched when `None`.
    pub eps_bar: Option<f64>,
    /// Declared `(α, s)`; required for `γ = 1`.
    pub growth: Option<(f64, f64)>,
}

/// Assembles every constant of the construction for data `a`, `f`.
pub fn build_barrier(a: &ScalarField, f: &ScalarField, eigen: &EigenPair, req: &BarrierRequest) -> Result<BarrierParams> {
    let p = eigen.p;
    let gamma = req.gamma;
    let r = barrier_exponent(p, gamma)?;
    let (c, d) = barrier_constants(p, gamma, eigen.lambda_p)?;
    a.check_grid(&eigen.phi1)?;
    f.check_grid(&eigen.phi1)?;
    if let Some(node) = (0..a.values().len()).find(|&i| !(a.values()[i] >= 0.0)) {
        return Err(Error::Hypothesis(format!("a must be nonnegative; a = {} at node {node}", a.values()[node])));
    }
    let grid = eigen.phi1.grid();
    let delta = distance_field(grid);
    let hopf = hopf_constants(&eigen.phi1, &delta)?;
    let degenerate = a.linf_norm() == 0.0;

    let mut eps_bar_searched = false;
    let mut gamma1 = None;
    let mut search = None;
    let eps_bar = match (req.eps_bar, gamma < 1.0, degenerate) {
        (Some(e), _, _) => e,
        (None, _, true) => EPS_SEARCH_START.min(grid.inradius()),
        (None, true, false) => {
            eps_bar_searched = true;
            let choice = choose_eps_bar(a, eigen, gamma, EPS_SEARCH_START)?;
            let e = choice.eps_bar;
            search = Some(choice);
            e
        }
        (None, false, false) => {
            eps_bar_searched = true;
            let (alpha, s) = req
                .growth
                .ok_or_else(|| Error::arg("growth", "gamma = 1 requires declared (alpha, s)"))?;
            let (e, g) = choose_eps_bar_gamma1(a, f, eigen, alpha, s, EPS_SEARCH_START)?;
            gamma1 = Some(g);
            e
        }
    };
    if !(eps_bar > 0.0) {
        return Err(Error::arg("eps_bar", format!("must be positive, got {eps_bar}")));
    }
    let c_band = essential_inf_outside_band(f, eps_bar)?;
    let c_bar = band_gradient_floor(&eigen.phi1, p, eps_bar)?;

    let t0 = compute_t0(a, &eigen.phi1, p, gamma, eps_bar, d)?;
    let mu0 = if degenerate { 0.0 } else { compute_mu0(t0, d, &eigen.phi1, p, gamma, c_band)? };

    // Envelope constants from the halving sequence below the chosen width.
    let (c3, c4) = match &search {
        Some(ch) => (ch.c3, ch.c4),
        None if degenerate => (0.0, 0.0),
        None => {
            let eps = halving_sequence(eps_bar.min(grid.inradius()), grid.h());
            let eps = if eps.is_empty() { vec![eps_bar] } else { eps };
            fit_envelope(&t0_sequence(a, eigen, gamma, d, &eps)?, r)
        }
    };

    let band = if gamma < 1.0 && !degenerate {
        match &search {
            Some(ch) => Some(ch.conditions),
            None => Some(band_conditions(a, eigen, gamma, eps_bar, c3)?.0),
        }
    } else {
        None
    };

    if gamma >= 1.0 && gamma1.is_none() && !degenerate {
        if let Some((alpha, s)) = req.growth {
            let mut g = fit_gamma1_growth(a, f, &delta, eps_bar, alpha, s)?;
            g.t0c1_ok = t0 * hopf.c1 >= 1.0;
            g.smallness_lhs = c_tilde(&g, eigen.lambda_p, p, hopf.c1, hopf.c2, c3, c4)
                * (eps_bar.powf(alpha) + (eps_bar + 1.0).powf(s));
            gamma1 = Some(g);
        }
    }

    let barrier_field = eigen.phi1.map(|x| t0 * x.max(0.0).powf(r));
    Ok(BarrierParams {
        p,
        gamma,
        r,
        c_pgamma: c,
        d_pgamma_omega: d,
        lambda_p: eigen.lambda_p,
        eps_bar,
        eps_bar_searched,
        c_band,
        c_bar,
        t0,
        mu0,
        c1: hopf.c1,
        c2: hopf.c2,
        c3,
        c4,
        degenerate,
        band,
        gamma1,
        barrier_field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::{eigenpair, EigenOptions};
    use crate::grid::Grid;
    use std::f64::consts::PI;

    #[test]
    fn exponents_and_constants() {
        assert!((barrier_exponent(2.0, 0.5).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(barrier_exponent(2.0, 1.0).unwrap(), 1.0);
        assert!((barrier_exponent(3.0, 0.5).unwrap() - 1.2).abs() < 1e-15);
        assert!(barrier_exponent(1.0, 0.5).is_err());
        assert!(barrier_exponent(2.0, 1.5).is_err());
        assert!(barrier_exponent(2.0, 0.0).is_err());

        let (c, d) = barrier_constants(2.0, 0.5, PI * PI).unwrap();
        assert!((c - 4.0 / 9.0).abs() < 1e-14);
        assert!((d - 4.0 / 3.0 * PI * PI).abs() < 1e-12);
        let (c, _) = barrier_constants(2.0, 1.0 - 1e-9, 1.0).unwrap();
        assert!(c.abs() < 1e-8);
    }

    #[test]
    fn inf_outside_band() {
        let g = Grid::interval(0.0, 1.0, 101).unwrap();
        assert_eq!(essential_inf_outside_band(&ScalarField::constant(&g, 1.0), 0.1).unwrap(), 1.0);
        let f = distance_field(&g).map(|d| if d > 0.0 { d.powf(-0.5) } else { 0.0 });
        let m = essential_inf_outside_band(&f, 0.1).unwrap();
        assert!((m - 2f64.sqrt()).abs() < 1e-12);
        let mut z = ScalarField::constant(&g, 1.0);
        z.values_mut()[50] = 0.0;
        assert!(matches!(essential_inf_outside_band(&z, 0.1), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn t0_with_analytic_eigenfunction() {
        // 0.1 is a lattice node on 641 nodes
        let g = Grid::interval(0.0, 1.0, 641).unwrap();
        let phi = ScalarField::from_fn(&g, |_, x| (PI * x[0]).sin());
        let (_, d) = barrier_constants(2.0, 0.5, PI * PI).unwrap();
        let a = ScalarField::constant(&g, 1.0);
        let t0 = compute_t0(&a, &phi, 2.0, 0.5, 0.1, d).unwrap();
        let want = (1.0 / (d * (0.1 * PI).sin().powi(2))).powf(2.0 / 3.0);
        assert!((t0 - want).abs() < 1e-12 * want);
        assert!((t0 - 0.8587).abs() < 1e-4);
        let t8 = compute_t0(&a.scaled(8.0), &phi, 2.0, 0.5, 0.1, d).unwrap();
        assert!((t8 / t0 - 8f64.powf(2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(compute_t0(&ScalarField::zeros(&g), &phi, 2.0, 0.5, 0.1, d).unwrap(), 0.0);

        let mu0 = compute_mu0(t0, d, &phi, 2.0, 0.5, 1.0).unwrap();
        assert!((mu0 - 2.0 * t0 * d).abs() < 1e-12);
        assert!((mu0 - 22.60).abs() < 0.01);
        let half = compute_mu0(t0, d, &phi, 2.0, 0.5, 2.0).unwrap();
        assert!((half - mu0 / 2.0).abs() < 1e-12);

        let t1 = compute_t0(&a, &phi, 2.0, 1.0, 0.1, PI * PI).unwrap();
        assert!((t1 - 1.0299).abs() < 5e-4);
        let mu1 = compute_mu0(t1, PI * PI, &phi, 2.0, 1.0, 1.0).unwrap();
        assert!((mu1 - 20.33).abs() < 0.01);
    }

    fn eigen_1d(p: f64, nodes: usize) -> EigenPair {
        let g = Grid::interval(0.0, 1.0, nodes).unwrap();
        eigenpair(&g, p, &EigenOptions::for_exponent(p)).unwrap()
    }

    #[test]
    fn band_search_postconditions() {
        let e = eigen_1d(2.0, 257);
        let g = e.phi1.grid().clone();
        let a = ScalarField::constant(&g, 1.0);
        for gamma in [0.5, 0.9] {
            let ch = choose_eps_bar(&a, &e, gamma, EPS_SEARCH_START).unwrap();
            assert!(ch.eps_bar > 4.0 * g.h() - 1e-15 && ch.eps_bar <= 0.25);
            let (again, _) = band_conditions(&a, &e, gamma, ch.eps_bar, ch.c3).unwrap();
            assert!(again.hold());
            let r = barrier_exponent(2.0, gamma).unwrap();
            for &(eps, t0) in &ch.t0_by_eps {
                let v = t0 * eps.powf(r);
                assert!(v >= ch.c3 - 1e-12 && v <= ch.c4 + 1e-12);
            }
        }
        let big = choose_eps_bar(&a.scaled(1000.0), &e, 0.5, EPS_SEARCH_START).unwrap();
        let base = choose_eps_bar(&a, &e, 0.5, EPS_SEARCH_START).unwrap();
        assert!(big.eps_bar <= base.eps_bar);
        assert!(choose_eps_bar(&ScalarField::zeros(&g), &e, 0.5, 0.25).is_err());
    }

    #[test]
    fn subsolution_residual_is_linear_in_mu() {
        let e = eigen_1d(2.0, 129);
        let g = e.phi1.grid().clone();
        let one = ScalarField::constant(&g, 1.0);
        let v = e.phi1.map(|x| 0.8 * x.powf(4.0 / 3.0));
        let opts = PlapOptions::for_exponent(2.0);
        let r0 = subsolution_residual(&v, 2.0, 0.5, &one, &one, 1.0, 1, 10.0, &opts).unwrap();
        let r1 = subsolution_residual(&v, 2.0, 0.5, &one, &one, 1.0, 1, 20.0, &opts).unwrap();
        assert!((r0 - r1 - 10.0).abs() < 1e-9);
        let huge = subsolution_residual(&v, 2.0, 0.5, &one, &one, 1.0, 1, 1e9, &opts).unwrap();
        assert!(huge < -1e8);
    }

    #[test]
    fn growth_fit_exact_powers() {
        let g = Grid::interval(0.0, 1.0, 257).unwrap();
        let d = distance_field(&g);
        let a = d.map(|x| x.sqrt());
        let f = d.map(|x| if x > 0.0 { x.powf(-0.5) } else { 0.0 });
        let fit = fit_gamma1_growth(&a, &f, &d, 0.1, 0.5, 0.5).unwrap();
        assert!((fit.a_bar - 1.0).abs() < 1e-12);
        assert!((fit.f_bar - 1.0).abs() < 1e-12);
        assert!(fit.compatibility);
        let loose = fit_gamma1_growth(&a, &f, &d, 0.1, 0.4, 0.4).unwrap();
        assert!(!loose.compatibility);
        let one = ScalarField::constant(&g, 1.0);
        assert!(matches!(fit_gamma1_growth(&one, &f, &d, 0.1, 0.5, 0.5), Err(Error::Hypothesis(_))));
        assert!(matches!(fit_gamma1_growth(&a, &one, &d, 0.1, 0.5, 0.5), Err(Error::Hypothesis(_))));
    }
}
