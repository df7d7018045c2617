//! Experiment drivers behind the `sinreact` binary.
//!
//! Every command computes mesh levels `0..=refine` of the configured
//! problem and writes into the output directory:
//!
//! * `run.json`: command, config echo, per-level results;
//! * `iterations.csv`: per-iteration records (see [`ITERATION_COLUMNS`]);
//! * `fields/*.csv`: field dumps on the finest mesh;
//! * `sweep.csv` (sweep only): see [`SWEEP_COLUMNS`].
//!
//! CSV files start with one `#` line carrying a timestamp; everything after
//! it is a deterministic function of the config.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use crate::analysis::{
    analyze, nonexistence_threshold, refinement_study, threshold_consistency, AnalysisReport, Consistency,
    RefinementStudy, Threshold, Verdict,
};
use crate::barrier::{sub1_identity, subsolution_residual, BarrierParams, Sub1Check};
use crate::config::{RunConfig, Suite};
use crate::eigen::{eigenpair, hopf_constants, EigenOptions, HopfConstants};
use crate::error::{Error, Result};
use crate::exec::par_map;
use crate::fields::ScalarField;
use crate::grid::distance_field;
use crate::plap::solve_dirichlet;
use crate::scheme::{run_scheme_on, Instance, ProblemSpec, SchemeReport, ENERGY_LADDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Eigen,
    Solve,
    Scheme,
    Verify,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Eigen => "eigen",
            Command::Solve => "solve",
            Command::Scheme => "scheme",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }
}

/// `iterations.csv` columns for `scheme`, `verify` and `sweep`.
pub const ITERATION_COLUMNS: &str = "mu,level,n,sup_distance,barrier_margin,energy_ratio_k0.1,\
energy_ratio_k0.5,energy_ratio_k1,energy_ratio_k2,upper_excess,min_interior,linf,clamped_nodes,\
inner_iterations,inner_residual";
/// `iterations.csv` columns for `eigen`.
pub const EIGEN_ITERATION_COLUMNS: &str = "level,iteration,lambda";
/// `iterations.csv` columns for `solve` (Newton iterations).
pub const SOLVE_ITERATION_COLUMNS: &str = "level,iteration,residual,energy";
pub const SWEEP_COLUMNS: &str = "mu,level,nodes,verdict,converged,iterations,collapse,min_interior,linf,\
gradient_energy,reaction,source,energy_gap,weak_residual,singular_integral,mu_star,mu_star_mesh,t0,mu0";

/// Subsolution residuals are checked at `mu0` for these truncation levels.
pub const SUBSOLUTION_LEVELS: [usize; 3] = [1, 10, 100];
/// Allowed subsolution residual as a fraction of `mu0 ‖f‖_∞`.
pub const SUBSOLUTION_SLACK: f64 = 0.05;

/// Config echo as a JSON object in key order.
struct ConfigObject<'a>(&'a RunConfig);

impl Serialize for ConfigObject<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries = self.0.entries();
        let mut m = s.serialize_map(Some(entries.len()))?;
        for (k, v) in entries {
            m.serialize_entry(k, &v)?;
        }
        m.end()
    }
}

#[derive(Serialize)]
struct RunJson<'a, T: Serialize> {
    command: &'static str,
    config_echo: String,
    config: ConfigObject<'a>,
    results: T,
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn csv_header(cmd: Command) -> String {
    format!("# sinreact {} generated_unix={}\n", cmd.name(), timestamp())
}

fn write_csv(out: &Path, name: &str, cmd: Command, columns: &str, body: &str) -> Result<()> {
    fs::write(out.join(name), format!("{}{columns}\n{body}", csv_header(cmd)))?;
    Ok(())
}

fn write_fields(out: &Path, cmd: Command, fields: &[(&str, &ScalarField)]) -> Result<()> {
    let dir = out.join("fields");
    fs::create_dir_all(&dir)?;
    for (name, f) in fields {
        let cols = if f.grid().dimension() == 1 { "# x value\n" } else { "# x y value\n" };
        fs::write(dir.join(format!("{name}.csv")), format!("{}{cols}{}", csv_header(cmd), f.dump()))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(out: &Path, cmd: Command, cfg: &RunConfig, results: T) -> Result<()> {
    let doc = RunJson {
        command: cmd.name(),
        config_echo: cfg.echo(),
        config: ConfigObject(cfg),
        results,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(out.join("run.json"), text + "\n")?;
    Ok(())
}

fn levels(cfg: &RunConfig, min: u32) -> Vec<(u32, ProblemSpec)> {
    (0..=cfg.refine.max(min)).map(|l| (l, cfg.problem.refined(l))).collect()
}

/// Runs `cmd` and writes its artifacts into `out` (created if missing).
pub fn run_command(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    match cmd {
        Command::Eigen => cmd_eigen(cfg, out),
        Command::Solve => cmd_solve(cfg, out),
        Command::Scheme => cmd_scheme(cfg, out),
        Command::Verify => cmd_verify(cfg, out),
        Command::Sweep => cmd_sweep(cfg, out),
    }
}

#[derive(Serialize)]
struct EigenLevel {
    level: u32,
    nodes: Vec<usize>,
    h: f64,
    lambda: f64,
    rayleigh_residual: f64,
    iterations: usize,
    hopf: HopfConstants,
}

pub fn cmd_eigen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = cfg.problem.p;
    let mut opts = EigenOptions::for_exponent(p);
    opts.plap = cfg.problem.plap;
    let runs = par_map(&levels(cfg, 0), |(l, pr)| -> Result<_> {
        let grid = pr.grid()?;
        let e = eigenpair(&grid, p, &opts)?;
        let hopf = hopf_constants(&e.phi1, &distance_field(&grid))?;
        Ok((*l, pr.nodes.clone(), e, hopf))
    });
    let mut rows = String::new();
    let mut results = Vec::new();
    let mut finest = None;
    for r in runs {
        let (level, nodes, e, hopf) = r?;
        for (i, lam) in e.lambda_history.iter().enumerate() {
            let _ = writeln!(rows, "{level},{},{lam}", i + 1);
        }
        results.push(EigenLevel {
            level,
            nodes,
            h: e.phi1.grid().h(),
            lambda: e.lambda_p,
            rayleigh_residual: e.rayleigh_residual,
            iterations: e.lambda_history.len(),
            hopf,
        });
        finest = Some(e);
    }
    let e = finest.expect("at least one level");
    write_csv(out, "iterations.csv", Command::Eigen, EIGEN_ITERATION_COLUMNS, &rows)?;
    write_fields(out, Command::Eigen, &[("phi1", &e.phi1)])?;
    write_json(out, Command::Eigen, cfg, results)
}

#[derive(Serialize)]
struct SolveLevel {
    level: u32,
    nodes: Vec<usize>,
    converged: bool,
    iterations: usize,
    final_residual: f64,
    linf: f64,
}

/// Solves `-Δ_p w = μ f` with zero boundary data.
pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<()> {
    let runs = par_map(&levels(cfg, 0), |(l, pr)| -> Result<_> {
        let grid = pr.grid()?;
        let g = pr.f.realize(&grid)?.scaled(pr.mu);
        Ok((*l, pr.nodes.clone(), solve_dirichlet(&grid, pr.p, &g, &pr.plap)?))
    });
    let mut rows = String::new();
    let mut results = Vec::new();
    let mut finest = None;
    for r in runs {
        let (level, nodes, o) = r?;
        for (i, (res, en)) in o.residual_history.iter().zip(&o.energy_history).enumerate() {
            let _ = writeln!(rows, "{level},{i},{res},{en}");
        }
        results.push(SolveLevel {
            level,
            nodes,
            converged: o.converged,
            iterations: o.iterations,
            final_residual: o.final_residual(),
            linf: o.solution.linf_norm(),
        });
        finest = Some(o.solution);
    }
    write_csv(out, "iterations.csv", Command::Solve, SOLVE_ITERATION_COLUMNS, &rows)?;
    write_fields(out, Command::Solve, &[("w", finest.as_ref().expect("at least one level"))])?;
    write_json(out, Command::Solve, cfg, results)
}

/// One scheme run with its analysis.
#[derive(Serialize)]
pub struct SchemeLevel {
    pub mu: f64,
    pub level: u32,
    pub nodes: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    pub failure: Option<String>,
    pub min_barrier_margin: f64,
    pub max_energy_ratio: f64,
    pub max_upper_excess: f64,
    pub analysis: AnalysisReport,
}

fn iteration_rows(rows: &mut String, mu: f64, level: u32, report: &SchemeReport) {
    for r in &report.records {
        let _ = write!(rows, "{mu},{level},{},{},{}", r.n, r.sup_distance, r.barrier_margin);
        for e in r.energy_ratios {
            let _ = write!(rows, ",{e}");
        }
        let _ = writeln!(
            rows,
            ",{},{},{},{},{},{}",
            r.upper_excess, r.min_interior, r.linf, r.clamped_nodes, r.inner_iterations, r.inner_residual
        );
    }
}

fn instances(cfg: &RunConfig, min_levels: u32) -> Result<Vec<(u32, ProblemSpec, Instance)>> {
    par_map(&levels(cfg, min_levels), |(l, pr)| Instance::new(pr).map(|inst| (*l, pr.clone(), inst)))
        .into_iter()
        .collect()
}

/// Runs the scheme at `mu` on every level; verdicts use the residual trend
/// of the coarser levels.
fn scheme_levels(
    mu: f64,
    insts: &[(u32, ProblemSpec, Instance)],
) -> Result<Vec<(SchemeLevel, SchemeReport)>> {
    let mut out: Vec<(SchemeLevel, SchemeReport)> = Vec::new();
    for (level, pr, inst) in insts {
        let pr = pr.with_mu(mu);
        let report = run_scheme_on(&pr, inst, false)?;
        let mut analysis = analyze(&pr, &inst.a, &inst.f, &inst.barrier, &report)?;
        let coarser: Vec<f64> = out.iter().map(|(s, _)| s.analysis.weak_residual).collect();
        analysis.apply_trend(&coarser);
        out.push((
            SchemeLevel {
                mu,
                level: *level,
                nodes: pr.nodes.clone(),
                converged: report.converged,
                iterations: report.iterations,
                failure: report.failure.clone(),
                min_barrier_margin: report.min_barrier_margin(),
                max_energy_ratio: report.max_energy_ratio(),
                max_upper_excess: report.max_upper_excess(),
                analysis,
            },
            report,
        ));
    }
    Ok(out)
}

#[derive(Serialize)]
struct SchemeResults<'a> {
    barrier: &'a BarrierParams,
    energy_ladder: [f64; 4],
    levels: Vec<SchemeLevel>,
}

fn finest_fields(out: &Path, cmd: Command, inst: &Instance, u: &ScalarField) -> Result<()> {
    write_fields(
        out,
        cmd,
        &[
            ("u", u),
            ("barrier", &inst.barrier.barrier_field),
            ("phi1", &inst.eigen.phi1),
            ("a", &inst.a),
            ("f", &inst.f),
        ],
    )
}

pub fn cmd_scheme(cfg: &RunConfig, out: &Path) -> Result<()> {
    let insts = instances(cfg, 0)?;
    let runs = scheme_levels(cfg.problem.mu, &insts)?;
    let mut rows = String::new();
    for (s, r) in &runs {
        iteration_rows(&mut rows, s.mu, s.level, r);
    }
    write_csv(out, "iterations.csv", Command::Scheme, ITERATION_COLUMNS, &rows)?;
    let (_, _, inst) = insts.last().expect("at least one level");
    finest_fields(out, Command::Scheme, inst, &runs.last().expect("at least one level").1.u)?;
    let results = SchemeResults {
        barrier: &inst.barrier,
        energy_ladder: ENERGY_LADDER,
        levels: runs.into_iter().map(|(s, _)| s).collect(),
    };
    write_json(out, Command::Scheme, cfg, results)
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierLevel {
    pub level: u32,
    pub h: f64,
    pub params: BarrierParams,
    /// `(n, max defect)` at `mu0`.
    pub subsolution_residuals: Vec<(usize, f64)>,
    pub allowed: f64,
    pub within_slack: bool,
    /// Stencil against closed form outside a 2-cell collar.
    pub sub1: Sub1Check,
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierSuite {
    pub skipped: bool,
    pub reason: Option<String>,
    pub levels: Vec<BarrierLevel>,
    /// Worst residual shrinks from the coarsest to the finest level.
    pub slack_shrinks: Option<bool>,
}

/// Subsolution checks of the barrier at `mu0` on each level.
pub fn barrier_suite(insts: &[(u32, ProblemSpec, Instance)]) -> Result<BarrierSuite> {
    if insts.iter().any(|(_, _, i)| i.barrier.degenerate) {
        return Ok(BarrierSuite {
            skipped: true,
            reason: Some("a vanishes identically: t0 = mu0 = 0, no barrier to check".into()),
            levels: insts
                .iter()
                .map(|(l, _, i)| -> Result<BarrierLevel> {
                    Ok(BarrierLevel {
                        level: *l,
                        h: i.grid.h(),
                        params: i.barrier.clone(),
                        subsolution_residuals: Vec::new(),
                        allowed: 0.0,
                        within_slack: true,
                        sub1: sub1_identity(&i.eigen, i.barrier.gamma, 1.0, 2.0)?,
                    })
                })
                .collect::<Result<_>>()?,
            slack_shrinks: None,
        });
    }
    let mut levels = Vec::new();
    for (l, pr, inst) in insts {
        let b = &inst.barrier;
        let mut res = Vec::new();
        for n in SUBSOLUTION_LEVELS {
            let r = subsolution_residual(
                &b.barrier_field,
                pr.p,
                pr.gamma,
                &inst.a,
                &inst.f,
                b.c_band,
                n,
                b.mu0,
                &pr.plap,
            )?;
            res.push((n, r));
        }
        let allowed = SUBSOLUTION_SLACK * b.mu0 * inst.f.linf_norm();
        levels.push(BarrierLevel {
            level: *l,
            h: inst.grid.h(),
            params: b.clone(),
            within_slack: res.iter().all(|(_, r)| *r <= allowed),
            subsolution_residuals: res,
            allowed,
            sub1: sub1_identity(&inst.eigen, pr.gamma, b.t0, 2.0)?,
        });
    }
    let worst = |b: &BarrierLevel| b.subsolution_residuals.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let slack_shrinks = match levels.as_slice() {
        [first, .., last] => Some(worst(last) <= worst(first)),
        _ => None,
    };
    Ok(BarrierSuite {
        skipped: false,
        reason: None,
        levels,
        slack_shrinks,
    })
}

#[derive(Serialize)]
struct EnergySuite {
    relative_gaps: Vec<f64>,
    weak_residuals: Vec<f64>,
    max_energy_ratio: Vec<f64>,
}

#[derive(Serialize)]
struct TailSuite {
    skipped: bool,
    reason: Option<String>,
    report: Option<crate::analysis::TailReport>,
    meets_exponent: Option<bool>,
}

#[derive(Serialize)]
struct ThresholdSuite {
    threshold: Threshold,
    verdict: Verdict,
    consistency: Consistency,
}

#[derive(Serialize, Default)]
struct VerifyResults {
    #[serde(skip_serializing_if = "Option::is_none")]
    barrier: Option<BarrierSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    energy: Option<EnergySuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    integrability: Option<RefinementStudy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tails: Option<TailSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<ThresholdSuite>,
    levels: Vec<SchemeLevel>,
}

/// Tail exponent slack allowed below `N(p-1)/(N-p)`.
pub const TAIL_EXPONENT_SLACK: f64 = 0.3;

/// Runs the configured suites at the configured `μ` on at least two levels.
pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<()> {
    let insts = instances(cfg, 1)?;
    let mut results = VerifyResults::default();
    if cfg.suites.contains(&Suite::Barrier) {
        results.barrier = Some(barrier_suite(&insts)?);
    }
    let runs = scheme_levels(cfg.problem.mu, &insts)?;
    let mut rows = String::new();
    for (s, r) in &runs {
        iteration_rows(&mut rows, s.mu, s.level, r);
    }
    let (_, pr, inst) = insts.last().expect("at least two levels");
    let (finest, report) = runs.last().expect("at least two levels");
    if cfg.suites.contains(&Suite::Energy) {
        results.energy = Some(EnergySuite {
            relative_gaps: runs.iter().map(|(s, _)| s.analysis.energy.relative_gap).collect(),
            weak_residuals: runs.iter().map(|(s, _)| s.analysis.weak_residual).collect(),
            max_energy_ratio: runs.iter().map(|(s, _)| s.max_energy_ratio).collect(),
        });
    }
    if cfg.suites.contains(&Suite::Integrability) {
        let vals: Vec<f64> = runs.iter().map(|(s, _)| s.analysis.singular_integral).collect();
        results.integrability = Some(refinement_study(&vals));
    }
    if cfg.suites.contains(&Suite::Tails) {
        results.tails = Some(match &finest.analysis.tails {
            Some(t) => TailSuite {
                skipped: false,
                reason: None,
                meets_exponent: Some(t.fitted_exponent >= t.theoretical_exponent - TAIL_EXPONENT_SLACK),
                report: Some(t.clone()),
            },
            None => TailSuite {
                skipped: true,
                reason: Some("tail estimate needs p < N and a positive solution".into()),
                report: None,
                meets_exponent: None,
            },
        });
    }
    if cfg.suites.contains(&Suite::Threshold) {
        let threshold = nonexistence_threshold(pr, &inst.a, &inst.f, inst.eigen.lambda_p)?;
        let verdict = finest.analysis.verdict;
        results.threshold = Some(ThresholdSuite {
            consistency: threshold_consistency(&[(cfg.problem.mu, verdict)], threshold.mu_star),
            threshold,
            verdict,
        });
    }
    write_csv(out, "iterations.csv", Command::Verify, ITERATION_COLUMNS, &rows)?;
    finest_fields(out, Command::Verify, inst, &report.u)?;
    results.levels = runs.into_iter().map(|(s, _)| s).collect();
    write_json(out, Command::Verify, cfg, results)
}

#[derive(Serialize)]
struct SweepLevelSummary {
    level: u32,
    nodes: Vec<usize>,
    threshold: Threshold,
    consistency: Consistency,
    /// Verdicts are non-decreasing in `μ`.
    monotone_verdicts: bool,
    /// `μ ≤ 0.1 μ₀*` runs where the collapse indicator fired.
    collapsed_below_tenth: Vec<f64>,
}

#[derive(Serialize)]
struct SweepResults {
    mu: Vec<f64>,
    levels: Vec<SweepLevelSummary>,
    runs: Vec<SchemeLevel>,
}

/// Runs the scheme over the configured `μ` list, concurrently across `μ`.
pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mus = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config {
            line: 0,
            key: "sweep_mu".into(),
            reason: "the sweep command needs sweep_mu".into(),
        })?
        .values();
    let insts = instances(cfg, 0)?;
    let per_mu: Vec<Vec<(SchemeLevel, SchemeReport)>> =
        par_map(&mus, |&mu| scheme_levels(mu, &insts)).into_iter().collect::<Result<_>>()?;

    let mut rows = String::new();
    let mut sweep_rows = String::new();
    for runs in &per_mu {
        for (s, r) in runs {
            iteration_rows(&mut rows, s.mu, s.level, r);
            let (_, _, inst) = &insts[s.level as usize];
            let a = &s.analysis;
            let nodes = s.nodes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x");
            let _ = writeln!(
                sweep_rows,
                "{},{},{nodes},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.mu,
                s.level,
                a.verdict.as_str(),
                s.converged,
                s.iterations,
                a.verdict_inputs.collapse,
                a.verdict_inputs.min_interior,
                a.verdict_inputs.linf,
                a.energy.gradient_energy,
                a.energy.reaction,
                a.energy.source,
                a.energy.relative_gap,
                a.weak_residual,
                a.singular_integral,
                a.threshold.mu_star.map_or("none".to_string(), |m| m.to_string()),
                a.threshold.mesh_value,
                inst.barrier.t0,
                inst.barrier.mu0,
            );
        }
    }

    let mut summaries = Vec::new();
    for (level, pr, inst) in &insts {
        let threshold = nonexistence_threshold(pr, &inst.a, &inst.f, inst.eigen.lambda_p)?;
        let at_level: Vec<&SchemeLevel> = per_mu.iter().map(|runs| &runs[*level as usize].0).collect();
        let verdicts: Vec<(f64, Verdict)> = at_level.iter().map(|s| (s.mu, s.analysis.verdict)).collect();
        let cutoff = 0.1 * threshold.mu_star.unwrap_or(threshold.mesh_value);
        summaries.push(SweepLevelSummary {
            level: *level,
            nodes: pr.nodes.clone(),
            consistency: threshold_consistency(&verdicts, threshold.mu_star),
            monotone_verdicts: verdicts.windows(2).all(|w| w[0].1 <= w[1].1),
            collapsed_below_tenth: at_level
                .iter()
                .filter(|s| s.mu <= cutoff && s.analysis.verdict_inputs.collapse)
                .map(|s| s.mu)
                .collect(),
            threshold,
        });
    }

    write_csv(out, "iterations.csv", Command::Sweep, ITERATION_COLUMNS, &rows)?;
    write_csv(out, "sweep.csv", Command::Sweep, SWEEP_COLUMNS, &sweep_rows)?;
    let (_, _, inst) = insts.last().expect("at least one level");
    let u_top = &per_mu.last().expect("non-empty sweep").last().expect("at least one level").1.u;
    finest_fields(out, Command::Sweep, inst, u_top)?;
    let results = SweepResults {
        mu: mus,
        levels: summaries,
        runs: per_mu.into_iter().flatten().map(|(s, _)| s).collect(),
    };
    write_json(out, Command::Sweep, cfg, results)
}
