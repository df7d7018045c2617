//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored; a trailing `# ...`
//! after a value is a comment. Every key may appear at most once.

use std::fmt::{self, Write as _};
use std::path::PathBuf;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::plap::PlapOptions;
use crate::scheme::{Domain, FieldSpec, ProblemSpec, DEFAULT_MAX_OUTER_ITERS, DEFAULT_OUTER_TOL};

/// Keys in echo order.
pub const KEYS: &[&str] = &[
    "p",
    "gamma",
    "mu",
    "a",
    "f",
    "domain",
    "nodes",
    "q",
    "eps_bar",
    "growth",
    "outer_tol",
    "max_outer_iters",
    "grad_regularization",
    "newton_tol",
    "max_newton_iters",
    "refine",
    "sweep_mu",
    "suites",
];

const REQUIRED: &[&str] = &["p", "gamma", "mu", "a", "f", "domain", "nodes"];

/// Verification suites run by `verify`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Barrier,
    Energy,
    Integrability,
    Tails,
    Threshold,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Barrier,
        Suite::Energy,
        Suite::Integrability,
        Suite::Tails,
        Suite::Threshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Barrier => "barrier",
            Suite::Energy => "energy",
            Suite::Integrability => "integrability",
            Suite::Tails => "tails",
            Suite::Threshold => "threshold",
        }
    }
}

/// `μ` values of a sweep: an explicit list or `geom:start,stop,count`.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepSpec {
    List(Vec<f64>),
    Geometric { start: f64, stop: f64, count: usize },
}

impl SweepSpec {
    /// Sorted ascending, duplicates removed.
    pub fn values(&self) -> Vec<f64> {
        let mut v = match *self {
            SweepSpec::List(ref v) => v.clone(),
            SweepSpec::Geometric { start, stop, count } => {
                if count == 1 {
                    vec![start]
                } else {
                    (0..count)
                        .map(|j| start * (stop / start).powf(j as f64 / (count - 1) as f64))
                        .collect()
                }
            }
        };
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

impl fmt::Display for SweepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepSpec::List(v) => write!(f, "{}", join(v)),
            SweepSpec::Geometric { start, stop, count } => write!(f, "geom:{start},{stop},{count}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    /// Extra dyadic refinement levels; levels `0..=refine` are computed.
    pub refine: u32,
    pub sweep: Option<SweepSpec>,
    pub suites: Vec<Suite>,
}

impl RunConfig {
    /// Canonical text: every key in [`KEYS`] order, defaults filled.
    /// Parsing the echo yields the same config.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// `(key, value)` pairs of the echo.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let pr = &self.problem;
        let vals = [
            pr.p.to_string(),
            pr.gamma.to_string(),
            pr.mu.to_string(),
            pr.a.to_string(),
            pr.f.to_string(),
            pr.domain.to_string(),
            pr.nodes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x"),
            pr.q.map_or("none".into(), |q| q.to_string()),
            pr.eps_bar.map_or("auto".into(), |e| e.to_string()),
            pr.growth.map_or("none".into(), |(a, s)| format!("{a},{s}")),
            pr.outer_tol.to_string(),
            pr.max_outer_iters.to_string(),
            pr.plap.grad_regularization.to_string(),
            pr.plap.newton_tol.to_string(),
            pr.plap.max_newton_iters.to_string(),
            self.refine.to_string(),
            self.sweep.as_ref().map_or("none".into(), |s| s.to_string()),
            self.suites.iter().map(|s| s.name()).collect::<Vec<_>>().join(","),
        ];
        KEYS.iter().copied().zip(vals).collect()
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn cfg_err(line: usize, key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn num(line: usize, key: &str, v: &str) -> Result<f64> {
    let x: f64 = v
        .trim()
        .parse()
        .map_err(|_| cfg_err(line, key, format!("expected a number, got `{v}`")))?;
    if !x.is_finite() {
        return Err(cfg_err(line, key, "value must be finite"));
    }
    Ok(x)
}

fn nums(line: usize, key: &str, v: &str, count: usize) -> Result<Vec<f64>> {
    let out: Vec<f64> = v.split(',').map(|t| num(line, key, t)).collect::<Result<_>>()?;
    if count > 0 && out.len() != count {
        return Err(cfg_err(line, key, format!("expected {count} comma-separated numbers")));
    }
    Ok(out)
}

fn count(line: usize, key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| cfg_err(line, key, format!("expected a non-negative integer, got `{v}`")))
}

fn parse_field(line: usize, key: &str, v: &str) -> Result<FieldSpec> {
    let (kind, args) = v
        .split_once(':')
        .ok_or_else(|| cfg_err(line, key, "expected const:C, dpow:C,ALPHA, dinv:C,S or table:PATH"))?;
    Ok(match kind.trim() {
        "const" => FieldSpec::Const(num(line, key, args)?),
        "dpow" => {
            let x = nums(line, key, args, 2)?;
            FieldSpec::DistPow { c: x[0], alpha: x[1] }
        }
        "dinv" => {
            let x = nums(line, key, args, 2)?;
            FieldSpec::DistInv { c: x[0], s: x[1] }
        }
        "table" if !args.trim().is_empty() => FieldSpec::Table(PathBuf::from(args.trim())),
        other => return Err(cfg_err(line, key, format!("unknown field kind `{other}`"))),
    })
}

fn parse_domain(line: usize, key: &str, v: &str) -> Result<Domain> {
    let (kind, args) = v
        .split_once(':')
        .ok_or_else(|| cfg_err(line, key, "expected 1d:A,B or 2d:X0,X1,Y0,Y1"))?;
    let extents = match kind.trim() {
        "1d" => {
            let x = nums(line, key, args, 2)?;
            vec![(x[0], x[1])]
        }
        "2d" => {
            let x = nums(line, key, args, 4)?;
            vec![(x[0], x[1]), (x[2], x[3])]
        }
        other => return Err(cfg_err(line, key, format!("unknown domain kind `{other}`"))),
    };
    if extents.iter().any(|(a, b)| !(b > a)) {
        return Err(cfg_err(line, key, "each extent needs lower < upper"));
    }
    Ok(Domain { extents })
}

/// Parses a run configuration. Errors name the key and the 1-based line.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut seen: Vec<(&'static str, usize, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| cfg_err(line, body, "expected `key = value`"))?;
        let (k, v) = (k.trim(), v.trim());
        let key = KEYS
            .iter()
            .copied()
            .find(|&known| known == k)
            .ok_or_else(|| cfg_err(line, k, "unknown key"))?;
        if let Some((_, first, _)) = seen.iter().find(|(s, _, _)| *s == key) {
            return Err(cfg_err(line, key, format!("duplicate key (first set on line {first})")));
        }
        if v.is_empty() {
            return Err(cfg_err(line, key, "missing value"));
        }
        seen.push((key, line, v.to_string()));
    }
    let last_line = text.lines().count().max(1);
    for req in REQUIRED {
        if !seen.iter().any(|(k, _, _)| k == req) {
            return Err(cfg_err(last_line, req, "missing required key"));
        }
    }
    let get = |key: &str| seen.iter().find(|(k, _, _)| *k == key).map(|(_, l, v)| (*l, v.as_str()));
    let req = |key: &str| get(key).expect("required keys checked");

    let (l, v) = req("p");
    let p = num(l, "p", v)?;
    if !(p > 1.0) {
        return Err(cfg_err(l, "p", format!("need p > 1, got {p}")));
    }
    let (l, v) = req("gamma");
    let gamma = num(l, "gamma", v)?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(cfg_err(l, "gamma", format!("need 0 < gamma <= 1, got {gamma}")));
    }
    let (l, v) = req("mu");
    let mu = num(l, "mu", v)?;
    if !(mu > 0.0) {
        return Err(cfg_err(l, "mu", format!("need mu > 0, got {mu}")));
    }
    let (l, v) = req("a");
    let a = parse_field(l, "a", v)?;
    if let FieldSpec::Const(c) = a {
        if c < 0.0 {
            return Err(cfg_err(l, "a", "a must be non-negative"));
        }
    }
    let (l, v) = req("f");
    let f = parse_field(l, "f", v)?;
    let (l, v) = req("domain");
    let domain = parse_domain(l, "domain", v)?;
    let (l, v) = req("nodes");
    let nodes: Vec<usize> = v.split('x').map(|t| count(l, "nodes", t)).collect::<Result<_>>()?;
    if nodes.len() != domain.dimension() {
        return Err(cfg_err(l, "nodes", "need one node count per domain axis (e.g. 257 or 65x65)"));
    }
    if nodes.iter().any(|&n| n < 3) {
        return Err(cfg_err(l, "nodes", "need at least 3 nodes per axis"));
    }

    let mut plap = PlapOptions::for_exponent(p);
    let q = match get("q") {
        Some((_, "none")) | None => None,
        Some((l, v)) => {
            let q = num(l, "q", v)?;
            if !(q >= 1.0) {
                return Err(cfg_err(l, "q", "need q >= 1"));
            }
            Some(q)
        }
    };
    let eps_bar = match get("eps_bar") {
        Some((_, "auto")) | None => None,
        Some((l, v)) => {
            let e = num(l, "eps_bar", v)?;
            if !(e > 0.0) {
                return Err(cfg_err(l, "eps_bar", "need eps_bar > 0"));
            }
            Some(e)
        }
    };
    let growth = match get("growth") {
        Some((_, "none")) | None => None,
        Some((l, v)) => {
            let x = nums(l, "growth", v, 2)?;
            if x[0] < 0.0 || x[1] < 0.0 {
                return Err(cfg_err(l, "growth", "need alpha, s >= 0"));
            }
            Some((x[0], x[1]))
        }
    };
    let outer_tol = match get("outer_tol") {
        None => DEFAULT_OUTER_TOL,
        Some((l, v)) => {
            let t = num(l, "outer_tol", v)?;
            if !(t > 0.0) {
                return Err(cfg_err(l, "outer_tol", "need outer_tol > 0"));
            }
            t
        }
    };
    let max_outer_iters = match get("max_outer_iters") {
        None => DEFAULT_MAX_OUTER_ITERS,
        Some((l, v)) => match count(l, "max_outer_iters", v)? {
            0 => return Err(cfg_err(l, "max_outer_iters", "need at least 1")),
            n => n,
        },
    };
    if let Some((l, v)) = get("grad_regularization") {
        plap.grad_regularization = num(l, "grad_regularization", v)?;
        if plap.grad_regularization < 0.0 {
            return Err(cfg_err(l, "grad_regularization", "need >= 0"));
        }
    }
    if let Some((l, v)) = get("newton_tol") {
        plap.newton_tol = num(l, "newton_tol", v)?;
        if !(plap.newton_tol > 0.0) {
            return Err(cfg_err(l, "newton_tol", "need > 0"));
        }
    }
    if let Some((l, v)) = get("max_newton_iters") {
        plap.max_newton_iters = count(l, "max_newton_iters", v)?;
        if plap.max_newton_iters == 0 {
            return Err(cfg_err(l, "max_newton_iters", "need at least 1"));
        }
    }
    let refine = match get("refine") {
        None => 0,
        Some((l, v)) => {
            let r = count(l, "refine", v)?;
            if r > 6 {
                return Err(cfg_err(l, "refine", "at most 6 refinement levels"));
            }
            r as u32
        }
    };
    let sweep = match get("sweep_mu") {
        Some((_, "none")) | None => None,
        Some((l, v)) => {
            let spec = if let Some(args) = v.strip_prefix("geom:") {
                let parts: Vec<&str> = args.split(',').collect();
                if parts.len() != 3 {
                    return Err(cfg_err(l, "sweep_mu", "expected geom:START,STOP,COUNT"));
                }
                let (start, stop) = (num(l, "sweep_mu", parts[0])?, num(l, "sweep_mu", parts[1])?);
                let c = count(l, "sweep_mu", parts[2])?;
                if !(start > 0.0 && stop > 0.0) || c == 0 {
                    return Err(cfg_err(l, "sweep_mu", "need positive bounds and count >= 1"));
                }
                SweepSpec::Geometric { start, stop, count: c }
            } else {
                SweepSpec::List(nums(l, "sweep_mu", v, 0)?)
            };
            if spec.values().iter().any(|m| !(*m > 0.0)) {
                return Err(cfg_err(l, "sweep_mu", "sweep values must be positive"));
            }
            Some(spec)
        }
    };
    let suites = match get("suites") {
        None => Suite::ALL.to_vec(),
        Some((l, v)) => {
            let mut out = Vec::new();
            for name in v.split(',').map(str::trim) {
                let s = Suite::ALL
                    .into_iter()
                    .find(|s| s.name() == name)
                    .ok_or_else(|| cfg_err(l, "suites", format!("unknown suite `{name}`")))?;
                if !out.contains(&s) {
                    out.push(s);
                }
            }
            out.sort_by_key(|s| Suite::ALL.iter().position(|x| x == s));
            out
        }
    };

    let problem = ProblemSpec {
        p,
        gamma,
        mu,
        a,
        f,
        domain,
        nodes,
        q,
        eps_bar,
        growth,
        outer_tol,
        max_outer_iters,
        plap,
    };
    problem.validate().map_err(|e| match e {
        Error::Argument { name, reason } => {
            let line = get(name).map_or(last_line, |(l, _)| l);
            cfg_err(line, name, reason)
        }
        other => other,
    })?;
    Ok(RunConfig {
        problem,
        refine,
        sweep,
        suites,
    })
}
