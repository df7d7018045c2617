//! Numerical machinery for singular p-Laplacian reaction problems
//!
//! ```text
//! -Δ_p u + a(x) / u^γ = μ f(x)  in Ω,    u = 0  on ∂Ω,
//! ```
//!
//! with `p > 1`, `0 < γ <= 1`: a finite-difference p-Laplacian, the first
//! Dirichlet eigenpair, the eigenfunction-power barrier and its constants,
//! the truncated iterative scheme, and post-hoc checks of the energy,
//! integrability, tail and non-existence estimates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod barrier;
pub mod cli;
pub mod config;
pub mod eigen;
pub mod error;
pub mod exec;
pub mod fields;
pub mod grid;
mod linalg;
pub mod plap;
pub mod scheme;

pub use error::{Error, Result};
pub use fields::ScalarField;
pub use grid::{Grid, NodeMask};
