//! Nodal scalar fields and the norms, truncations and level-set measures
//! used by the estimates.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, NodeMask};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::arg(
                "values",
                format!("expected {} nodal values, got {}", grid.len(), values.len()),
            ));
        }
        Ok(ScalarField {
            grid: Arc::clone(grid),
            values,
        })
    }

    pub fn from_fn(grid: &Arc<Grid>, mut f: impl FnMut(usize, [f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(i, grid.coords(i))).collect();
        ScalarField {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        ScalarField {
            grid: Arc::clone(grid),
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub(crate) fn check_grid(&self, other: &ScalarField) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &ScalarField,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Result<ScalarField> {
        self.check_grid(other)?;
        Ok(ScalarField {
            grid: Arc::clone(&self.grid),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    /// Sets boundary nodes to zero.
    pub fn with_zero_boundary(mut self) -> ScalarField {
        for i in 0..self.values.len() {
            if self.grid.is_boundary(i) {
                self.values[i] = 0.0;
            }
        }
        self
    }

    pub fn vanishes_on_boundary(&self) -> bool {
        (0..self.values.len()).all(|i| !self.grid.is_boundary(i) || self.values[i] == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Minimum over the selected nodes, `None` for an empty selection.
    pub fn min_over(&self, mask: &NodeMask) -> Option<f64> {
        mask.iter().map(|i| self.values[i]).reduce(f64::min)
    }

    pub fn max_over(&self, mask: &NodeMask) -> Option<f64> {
        mask.iter().map(|i| self.values[i]).reduce(f64::max)
    }

    pub fn interior_min(&self) -> f64 {
        self.grid
            .interior_nodes()
            .map(|i| self.values[i])
            .fold(f64::INFINITY, f64::min)
    }

    /// `T_k(s) = max(-k, min(s, k))` applied nodewise.
    pub fn truncate(&self, k: f64) -> Result<ScalarField> {
        if !(k >= 0.0) {
            return Err(Error::arg("k", format!("truncation level must be >= 0, got {k}")));
        }
        Ok(self.map(|v| v.clamp(-k, k)))
    }

    /// Quadrature L^q norm, `q >= 1`.
    pub fn lq_norm(&self, q: f64) -> Result<f64> {
        if !(q >= 1.0) {
            return Err(Error::arg("q", format!("need q >= 1, got {q}")));
        }
        let s: f64 = self
            .values
            .iter()
            .zip(self.grid.quad_weights())
            .map(|(&v, &w)| w * v.abs().powf(q))
            .sum();
        Ok(s.powf(1.0 / q))
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `∫ |∇_h u|^p` over the shared cell stencil.
    pub fn gradient_seminorm_p(&self, p: f64) -> f64 {
        self.grid
            .cells()
            .iter()
            .map(|c| {
                let g = c.gradient(&self.values);
                c.weight * (g[0] * g[0] + g[1] * g[1]).powf(0.5 * p)
            })
            .sum()
    }

    /// Nodal `|∇_h u|` by centered differences (one-sided on the boundary).
    pub fn nodal_gradient_norm(&self) -> ScalarField {
        let grid = &self.grid;
        let n = grid.nodes_per_axis().to_vec();
        let h = grid.spacing().to_vec();
        let v = &self.values;
        let mut out = vec![0.0; v.len()];
        let stride = [1usize, n[0]];
        for (node, o) in out.iter_mut().enumerate() {
            let idx = [node % n[0], node / n[0]];
            let mut s2 = 0.0;
            for d in 0..grid.dimension() {
                let (i, m, st) = (idx[d], n[d], stride[d]);
                let g = if i == 0 {
                    (v[node + st] - v[node]) / h[d]
                } else if i == m - 1 {
                    (v[node] - v[node - st]) / h[d]
                } else {
                    (v[node + st] - v[node - st]) / (2.0 * h[d])
                };
                s2 += g * g;
            }
            *o = s2.sqrt();
        }
        ScalarField {
            grid: Arc::clone(grid),
            values: out,
        }
    }

    /// Quadrature measure of the super-level set `{u >= k}`.
    pub fn tail_measure(&self, k: f64) -> f64 {
        self.values
            .iter()
            .zip(self.grid.quad_weights())
            .filter(|(&v, _)| v >= k)
            .map(|(_, &w)| w)
            .sum()
    }

    /// Text dump: one line per node, `x [y] value`, 17 significant digits.
    pub fn dump(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 48);
        let dim = self.grid.dimension();
        for (i, v) in self.values.iter().enumerate() {
            let x = self.grid.coords(i);
            if dim == 1 {
                let _ = writeln!(out, "{:.16e} {:.16e}", x[0], v);
            } else {
                let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", x[0], x[1], v);
            }
        }
        out
    }

    /// Parses the dump format back onto `grid`. Lines starting with `#` are
    /// skipped; node coordinates must match the grid to `1e-9` relative.
    pub fn parse_dump(grid: &Arc<Grid>, text: &str) -> Result<ScalarField> {
        let dim = grid.dimension();
        let mut values = Vec::with_capacity(grid.len());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::arg("table", format!("line {}: {e}", lineno + 1)))?;
            if cols.len() != dim + 1 {
                return Err(Error::arg(
                    "table",
                    format!("line {}: expected {} columns", lineno + 1, dim + 1),
                ));
            }
            let node = values.len();
            if node >= grid.len() {
                return Err(Error::arg("table", "more records than grid nodes"));
            }
            let x = grid.coords(node);
            let scale = grid.extents().iter().map(|(a, b)| a.abs().max(b.abs())).fold(1.0, f64::max);
            for d in 0..dim {
                if (cols[d] - x[d]).abs() > 1e-9 * scale {
                    return Err(Error::arg(
                        "table",
                        format!("line {}: node coordinate mismatch", lineno + 1),
                    ));
                }
            }
            values.push(cols[dim]);
        }
        ScalarField::from_values(grid, values)
    }
}
