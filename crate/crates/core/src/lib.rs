//! Numerical maximization of Neumann Laplace–Beltrami eigenvalues on closed
//! triangulated surfaces.
//!
//! The crate is `no_std` and only needs an allocator. It contains
//!
//! * [`mesh`]: icosphere and torus generation, P1 element geometry, geodesic caps;
//! * [`fem`]: assembly of the ε-regularized pencil `M u = μ K u` and its density gradient;
//! * [`eig`]: a block eigensolver for the smallest eigenpairs of that pencil;
//! * [`density`]: projected gradient ascent over densities with a mass constraint;
//! * [`axisym`]: one-dimensional solvers for axially symmetric densities on the sphere;
//! * [`levelset`]: ersatz-material level-set optimization of domains.
//!
//! File formats and the command-line driver live in the `neumann-cli` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod axisym;
pub mod density;
pub mod eig;
pub mod error;
pub mod fem;
pub mod levelset;
pub mod mesh;
pub mod sparse;
pub mod trace;

mod dense;
mod geom;

pub use error::{Error, Result};
pub use geom::Vec3;
pub use mesh::{DensityField, Surface, SurfaceMesh};

/// Upper bound `2πk²` on `|Ω| μ_k(Ω)` for domains of the unit sphere.
pub fn strichartz_bound(k: usize) -> f64 {
    2.0 * core::f64::consts::PI * (k * k) as f64
}

/// True when `area · mu_k` respects [`strichartz_bound`] up to a relative slack of 1e-6.
pub fn strichartz_holds(k: usize, area: f64, mu_k: f64) -> bool {
    area * mu_k <= strichartz_bound(k) * (1.0 + 1e-6)
}
