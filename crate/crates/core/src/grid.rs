//! Uniform node lattices on intervals and axis-aligned rectangles.
//!
//! Nodes are numbered row-major with `x` varying fastest. The gradient
//! stencil lives here as a list of [`Cell`]s so that every quantity built
//! from gradients (seminorms, the discrete p-Laplacian, weak residuals)
//! shares one discretization. In 1D a cell is a lattice edge; in 2D each
//! lattice square is split into two right triangles along its anti-diagonal,
//! which reproduces the 5-point Laplacian for `p = 2`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::ScalarField;

/// One stencil cell: the gradient on the cell is `sum_k coef[k] * u[nodes[k]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub nodes: [usize; 3],
    pub coef: [[f64; 2]; 3],
    pub arity: usize,
    /// Cell measure (length or area).
    pub weight: f64,
}

impl Cell {
    #[inline]
    pub fn gradient(&self, values: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for k in 0..self.arity {
            let v = values[self.nodes[k]];
            g[0] += self.coef[k][0] * v;
            g[1] += self.coef[k][1] * v;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dimension: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    nodes_per_axis: [usize; 2],
    spacing: [f64; 2],
    boundary: Vec<bool>,
    quad_weights: Vec<f64>,
    cells: Vec<Cell>,
}

/// Builds a uniform grid. `extents` and `nodes_per_axis` must both have
/// `dimension` entries.
pub fn build_grid(
    dimension: usize,
    extents: &[(f64, f64)],
    nodes_per_axis: &[usize],
) -> Result<Arc<Grid>> {
    if dimension != 1 && dimension != 2 {
        return Err(Error::Grid(format!("dimension must be 1 or 2, got {dimension}")));
    }
    if extents.len() != dimension || nodes_per_axis.len() != dimension {
        return Err(Error::Grid(format!(
            "expected {dimension} extents and node counts, got {} and {}",
            extents.len(),
            nodes_per_axis.len()
        )));
    }
    let mut lo = [0.0; 2];
    let mut hi = [0.0; 2];
    let mut n = [1usize; 2];
    let mut h = [1.0; 2];
    for d in 0..dimension {
        let (a, b) = extents[d];
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::Grid(format!("degenerate extent [{a}, {b}] on axis {d}")));
        }
        if nodes_per_axis[d] < 3 {
            return Err(Error::Grid(format!(
                "need at least 3 nodes on axis {d}, got {}",
                nodes_per_axis[d]
            )));
        }
        lo[d] = a;
        hi[d] = b;
        n[d] = nodes_per_axis[d];
        h[d] = (b - a) / (n[d] - 1) as f64;
    }

    let total = n[0] * n[1];
    let mut boundary = vec![false; total];
    let mut quad_weights = vec![0.0; total];
    let axis_weight = |d: usize, i: usize| {
        if i == 0 || i == n[d] - 1 {
            0.5 * h[d]
        } else {
            h[d]
        }
    };
    for j in 0..n[1] {
        for i in 0..n[0] {
            let idx = j * n[0] + i;
            let on_x = i == 0 || i == n[0] - 1;
            if dimension == 1 {
                boundary[idx] = on_x;
                quad_weights[idx] = axis_weight(0, i);
            } else {
                boundary[idx] = on_x || j == 0 || j == n[1] - 1;
                quad_weights[idx] = axis_weight(0, i) * axis_weight(1, j);
            }
        }
    }

    let mut cells = Vec::new();
    if dimension == 1 {
        for i in 0..n[0] - 1 {
            cells.push(Cell {
                nodes: [i, i + 1, i + 1],
                coef: [[-1.0 / h[0], 0.0], [1.0 / h[0], 0.0], [0.0, 0.0]],
                arity: 2,
                weight: h[0],
            });
        }
    } else {
        let (ix, iy) = (1.0 / h[0], 1.0 / h[1]);
        let area = 0.5 * h[0] * h[1];
        for j in 0..n[1] - 1 {
            for i in 0..n[0] - 1 {
                let sw = j * n[0] + i;
                let se = sw + 1;
                let nw = sw + n[0];
                let ne = nw + 1;
                cells.push(Cell {
                    nodes: [sw, se, nw],
                    coef: [[-ix, -iy], [ix, 0.0], [0.0, iy]],
                    arity: 3,
                    weight: area,
                });
                cells.push(Cell {
                    nodes: [ne, nw, se],
                    coef: [[ix, iy], [-ix, 0.0], [0.0, -iy]],
                    arity: 3,
                    weight: area,
                });
            }
        }
    }

    Ok(Arc::new(Grid {
        dimension,
        lo,
        hi,
        nodes_per_axis: n,
        spacing: h,
        boundary,
        quad_weights,
        cells,
    }))
}

impl Grid {
    pub fn interval(a: f64, b: f64, nodes: usize) -> Result<Arc<Grid>> {
        build_grid(1, &[(a, b)], &[nodes])
    }

    pub fn rectangle(x: (f64, f64), y: (f64, f64), nx: usize, ny: usize) -> Result<Arc<Grid>> {
        build_grid(2, &[x, y], &[nx, ny])
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundary.is_empty()
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes_per_axis[..self.dimension]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dimension]
    }

    /// Largest spacing over the axes.
    pub fn h(&self) -> f64 {
        self.spacing().iter().cloned().fold(0.0, f64::max)
    }

    pub fn extents(&self) -> Vec<(f64, f64)> {
        (0..self.dimension).map(|d| (self.lo[d], self.hi[d])).collect()
    }

    pub fn coords(&self, node: usize) -> [f64; 2] {
        let nx = self.nodes_per_axis[0];
        let (i, j) = (node % nx, node / nx);
        let x = self.lo[0] + i as f64 * self.spacing[0];
        if self.dimension == 1 {
            [x, 0.0]
        } else {
            [x, self.lo[1] + j as f64 * self.spacing[1]]
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_mask(&self) -> NodeMask {
        NodeMask {
            bits: self.boundary.clone(),
        }
    }

    pub fn interior_mask(&self) -> NodeMask {
        self.boundary_mask().complement()
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| !self.boundary[i])
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Lebesgue measure of the domain.
    pub fn measure(&self) -> f64 {
        (0..self.dimension).map(|d| self.hi[d] - self.lo[d]).product()
    }

    pub fn inradius(&self) -> f64 {
        (0..self.dimension)
            .map(|d| 0.5 * (self.hi[d] - self.lo[d]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Exact distance from a node to the nearest face.
    pub fn distance(&self, node: usize) -> f64 {
        let x = self.coords(node);
        (0..self.dimension)
            .map(|d| (x[d] - self.lo[d]).min(self.hi[d] - x[d]))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }

    /// Next dyadic refinement: halves the spacing on every axis.
    pub fn refined(&self) -> Arc<Grid> {
        let nodes: Vec<usize> = self.nodes_per_axis().iter().map(|&n| 2 * (n - 1) + 1).collect();
        build_grid(self.dimension, &self.extents(), &nodes).expect("refinement of a valid grid")
    }
}

/// Per-node boolean selection on a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeMask {
    bits: Vec<bool>,
}

impl NodeMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        NodeMask { bits }
    }

    pub fn contains(&self, node: usize) -> bool {
        self.bits[node]
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> NodeMask {
        NodeMask {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &NodeMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }
}

pub fn distance_field(grid: &Arc<Grid>) -> ScalarField {
    ScalarField::from_fn(grid, |node, _| grid.distance(node))
}

/// Nodes with `delta < eps`, boundary nodes included. Its complement is the
/// interior region `{delta >= eps}`. When `eps` exceeds the inradius every
/// node is selected; callers can detect this with [`NodeMask::count`].
pub fn boundary_band(grid: &Grid, eps: f64) -> Result<NodeMask> {
    if !(eps > 0.0) {
        return Err(Error::arg("eps", format!("band width must be positive, got {eps}")));
    }
    Ok(NodeMask {
        bits: (0..grid.len())
            .map(|i| grid.is_boundary(i) || grid.distance(i) < eps)
            .collect(),
    })
}

/// Quadrature-weighted sum over all nodes.
pub fn integrate(field: &ScalarField) -> Result<f64> {
    let w = field.grid().quad_weights();
    let mut sum = 0.0;
    for (i, (&v, &wi)) in field.values().iter().zip(w).enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { node: i, value: v });
        }
        sum += v * wi;
    }
    Ok(sum)
}

/// Quadrature over interior nodes only; used for integrands that are
/// undefined on the boundary (negative powers of `delta` or of a solution).
pub fn integrate_interior(field: &ScalarField) -> Result<f64> {
    let grid = field.grid();
    let w = grid.quad_weights();
    let mut sum = 0.0;
    for i in grid.interior_nodes() {
        let v = field.values()[i];
        if !v.is_finite() {
            return Err(Error::NonFinite { node: i, value: v });
        }
        sum += v * w[i];
    }
    Ok(sum)
}

/// Behaviour of a sequence of integrals over successive dyadic refinements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementTrend {
    Converging,
    Diverging,
    Undetermined,
}

/// Ratio of successive increments at or above which a refinement sequence
/// is declared divergent. Logarithmic divergence gives ratio 1, power
/// divergence a ratio above 1, and `r`-power integrable singularities
/// `2^{-(1+r)}`.
pub const DIVERGENCE_INCREMENT_RATIO: f64 = 0.95;

/// Divergence detector for integrals computed on dyadic refinements
/// (coarse to fine). Fires when the value at least doubles across two
/// refinements, or when the last two increments are positive and no longer
/// shrinking.
pub fn refinement_trend(values: &[f64]) -> RefinementTrend {
    if values.len() < 3 || values.iter().any(|v| !v.is_finite()) {
        return RefinementTrend::Undetermined;
    }
    let m = values.len();
    let (a, b, c) = (values[m - 3], values[m - 2], values[m - 1]);
    if a > 0.0 && c >= 2.0 * a {
        return RefinementTrend::Diverging;
    }
    let (d1, d2) = (b - a, c - b);
    let scale = c.abs().max(1e-300);
    if d1.abs() <= 1e-12 * scale && d2.abs() <= 1e-12 * scale {
        return RefinementTrend::Converging;
    }
    if d1 > 0.0 && d2 > 0.0 && d2 / d1 >= DIVERGENCE_INCREMENT_RATIO {
        RefinementTrend::Diverging
    } else {
        RefinementTrend::Converging
    }
}
