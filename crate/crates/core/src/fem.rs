//! P1 surface finite elements for the ε-regularized density pencil
//!
//! ```text
//! M[i][j] = ∫ (ρ + ε)  ∇φi·∇φj        K[i][j] = ∫ (ρ + ε²) φi φj        g[l] = ∫ φl
//! ```
//!
//! Both integrals use the three edge-midpoint rule with ρ interpolated in
//! P1. The matrices are the quadrature-defined ones, and the eigenvalue
//! gradient below is the exact derivative of the discrete eigenvalue.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom;
use crate::mesh::{DensityField, SurfaceMesh};
use crate::sparse::{reverse_cuthill_mckee, CsrMatrix, SparsityPattern};
#[allow(unused_imports)]
use num_traits::Float;

/// Relative residual `‖Mu − μKu‖ / ‖Ku‖` above which an eigenpair handed to
/// [`eigenvalue_gradient`] is considered stale.
pub const GRADIENT_RESIDUAL_TOL: f64 = 1e-6;

/// The pencil `(M, K)` for one density, plus the mass vector.
#[derive(Debug, Clone)]
pub struct SparseSymSystem {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub mass_vector: Vec<f64>,
    pub epsilon: f64,
}

impl SparseSymSystem {
    pub fn dim(&self) -> usize {
        self.mass_vector.len()
    }
}

/// Precomputed per-mesh data: sparsity pattern, local stiffness blocks and
/// a bandwidth-reducing ordering for factorizations.
#[derive(Debug, Clone)]
pub struct Assembler<'a> {
    mesh: &'a SurfaceMesh,
    pattern: SparsityPattern,
    local_stiffness: Vec<[f64; 9]>,
    mass_vector: Vec<f64>,
    ordering: Vec<usize>,
}

impl<'a> Assembler<'a> {
    pub fn new(mesh: &'a SurfaceMesh) -> Self {
        let pattern = SparsityPattern::from_mesh(mesh);
        let local_stiffness = (0..mesh.n_triangles())
            .map(|t| {
                let g = mesh.gradients(t);
                let area = mesh.areas()[t];
                let mut s = [0.0; 9];
                for a in 0..3 {
                    for b in 0..3 {
                        s[3 * a + b] = area * geom::dot(g[a], g[b]);
                    }
                }
                s
            })
            .collect();
        let plain = CsrMatrix::from_pattern(&pattern, vec![0.0; pattern.nnz()]);
        let ordering = reverse_cuthill_mckee(&plain.adjacency());
        Self {
            mesh,
            pattern,
            local_stiffness,
            mass_vector: mesh.nodal_areas(),
            ordering,
        }
    }

    pub fn mesh(&self) -> &'a SurfaceMesh {
        self.mesh
    }

    pub fn mass_vector(&self) -> &[f64] {
        &self.mass_vector
    }

    /// Fill-reducing ordering (`perm[new] = old`) for the mesh graph.
    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    /// Assembles `(M, K)` for the given nodal density.
    pub fn assemble(&self, rho: &DensityField, epsilon: f64) -> Result<SparseSymSystem> {
        if !(epsilon > 0.0) {
            return Err(Error::domain("epsilon must be positive", epsilon));
        }
        rho.check_len(self.mesh.n_vertices())?;
        let (stiffness, mass) = self.assemble_coefficients(rho.values(), epsilon, epsilon * epsilon);
        Ok(SparseSymSystem {
            stiffness,
            mass,
            mass_vector: self.mass_vector.clone(),
            epsilon,
        })
    }

    /// Plain (ρ ≡ 1, ε = 0) stiffness and mass matrices.
    pub fn plain_matrices(&self) -> (CsrMatrix, CsrMatrix) {
        let ones = vec![1.0; self.mesh.n_vertices()];
        self.assemble_coefficients(&ones, 0.0, 0.0)
    }

    /// Stiffness with coefficient `ρ + stiff_shift`, mass with `ρ + mass_shift`.
    fn assemble_coefficients(&self, rho: &[f64], stiff_shift: f64, mass_shift: f64) -> (CsrMatrix, CsrMatrix) {
        let nnz = self.pattern.nnz();
        let mut m = vec![0.0; nnz];
        let mut k = vec![0.0; nnz];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let area = self.mesh.areas()[t];
            let r = [rho[tri[0]], rho[tri[1]], rho[tri[2]]];
            // Midpoint coefficients of edges (0,1), (1,2), (2,0).
            let c = [
                0.5 * (r[0] + r[1]) + mass_shift,
                0.5 * (r[1] + r[2]) + mass_shift,
                0.5 * (r[2] + r[0]) + mass_shift,
            ];
            let mean = (r[0] + r[1] + r[2]) / 3.0 + stiff_shift;
            let w = area / 12.0;
            let local_mass = [
                w * (c[0] + c[2]),
                w * c[0],
                w * c[2],
                w * c[0],
                w * (c[0] + c[1]),
                w * c[1],
                w * c[2],
                w * c[1],
                w * (c[1] + c[2]),
            ];
            let slots = self.pattern.triangle_slots(t);
            let ls = &self.local_stiffness[t];
            for p in 0..9 {
                m[slots[p]] += mean * ls[p];
                k[slots[p]] += local_mass[p];
            }
        }
        (
            CsrMatrix::from_pattern(&self.pattern, m),
            CsrMatrix::from_pattern(&self.pattern, k),
        )
    }

    /// `∂μ/∂ρ_l = uᵀ(∂_l M − μ ∂_l K)u / uᵀKu` for every vertex `l`,
    /// accumulated triangle by triangle. Fails when `(mu, u)` is not an
    /// eigenpair of `system` to within [`GRADIENT_RESIDUAL_TOL`].
    pub fn eigenvalue_gradient(&self, system: &SparseSymSystem, mu: f64, u: &[f64]) -> Result<Vec<f64>> {
        let n = self.mesh.n_vertices();
        if u.len() != n {
            return Err(Error::structural("eigenvector length", n, u.len()));
        }
        let ku = system.mass.mul_vec(u);
        let mu_vec = system.stiffness.mul_vec(u);
        let ku_norm = ku.iter().map(|x| x * x).sum::<f64>().sqrt();
        let res = mu_vec
            .iter()
            .zip(&ku)
            .map(|(a, b)| (a - mu * b) * (a - mu * b))
            .sum::<f64>()
            .sqrt();
        let scale = ku_norm.max(f64::MIN_POSITIVE);
        if !(res <= GRADIENT_RESIDUAL_TOL * scale) {
            return Err(Error::StaleEigenpair {
                residual: res / scale,
                tol: GRADIENT_RESIDUAL_TOL,
            });
        }
        let norm = u.iter().zip(&ku).map(|(a, b)| a * b).sum::<f64>();
        Ok(self.gradient_unchecked(mu, u, norm))
    }

    pub(crate) fn gradient_unchecked(&self, mu: f64, u: &[f64], u_k_u: f64) -> Vec<f64> {
        let mut grad = vec![0.0; self.mesh.n_vertices()];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let area = self.mesh.areas()[t];
            let g = self.mesh.gradients(t);
            let uu = [u[tri[0]], u[tri[1]], u[tri[2]]];
            let grad_u = geom::add(
                geom::add(geom::scale(g[0], uu[0]), geom::scale(g[1], uu[1])),
                geom::scale(g[2], uu[2]),
            );
            let stiff = area / 3.0 * geom::dot(grad_u, grad_u);
            // Squared midpoint values on edges (0,1), (1,2), (2,0).
            let q = [
                0.25 * (uu[0] + uu[1]) * (uu[0] + uu[1]),
                0.25 * (uu[1] + uu[2]) * (uu[1] + uu[2]),
                0.25 * (uu[2] + uu[0]) * (uu[2] + uu[0]),
            ];
            let w = area / 6.0;
            let mass = [w * (q[0] + q[2]), w * (q[0] + q[1]), w * (q[1] + q[2])];
            for a in 0..3 {
                grad[tri[a]] += stiff - mu * mass[a];
            }
        }
        for v in &mut grad {
            *v /= u_k_u;
        }
        grad
    }
}

/// Assembles the pencil for one density. Prefer [`Assembler`] when assembling
/// repeatedly on the same mesh.
pub fn assemble_system(mesh: &SurfaceMesh, rho: &DensityField, epsilon: f64) -> Result<SparseSymSystem> {
    Assembler::new(mesh).assemble(rho, epsilon)
}

/// Gradient of a simple eigenvalue with respect to the nodal density.
pub fn eigenvalue_gradient(
    mesh: &SurfaceMesh,
    rho: &DensityField,
    epsilon: f64,
    mu: f64,
    u: &[f64],
) -> Result<Vec<f64>> {
    let assembler = Assembler::new(mesh);
    let system = assembler.assemble(rho, epsilon)?;
    assembler.eigenvalue_gradient(&system, mu, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::make_icosphere;
    use core::f64::consts::PI;

    #[test]
    fn matrices_are_symmetric_with_constant_kernel() {
        let mesh = make_icosphere(3).unwrap();
        let rho = DensityField::new(
            mesh.vertices()
                .iter()
                .map(|v| 0.5 + 0.5 * (3.0 * v[0]).sin() * v[2])
                .collect(),
        )
        .unwrap();
        let sys = assemble_system(&mesh, &rho, 1e-4).unwrap();
        assert!(sys.stiffness.is_symmetric());
        assert!(sys.mass.is_symmetric());
        let ones = vec![1.0; mesh.n_vertices()];
        let m1 = sys.stiffness.mul_vec(&ones);
        let scale = sys.stiffness.norm_inf();
        assert!(m1.iter().all(|v| v.abs() <= 1e-10 * scale));
    }

    #[test]
    fn coordinate_dirichlet_energy() {
        let mesh = make_icosphere(4).unwrap();
        let rho = DensityField::constant(mesh.n_vertices(), 1.0).unwrap();
        let sys = assemble_system(&mesh, &rho, 1e-12).unwrap();
        let x: Vec<f64> = mesh.vertices().iter().map(|v| v[0]).collect();
        let energy = sys.stiffness.quad_form(&x);
        let exact = 8.0 * PI / 3.0;
        assert!((energy - exact).abs() / exact < 1e-2, "{energy}");
    }

    #[test]
    fn zero_density_scales_plain_matrices() {
        let mesh = make_icosphere(2).unwrap();
        let asm = Assembler::new(&mesh);
        let eps = 1e-4;
        let sys = asm
            .assemble(&DensityField::constant(mesh.n_vertices(), 0.0).unwrap(), eps)
            .unwrap();
        let (s, m) = asm.plain_matrices();
        for (a, b) in sys.stiffness.values().iter().zip(s.values()) {
            assert!((a - eps * b).abs() <= 1e-14 * b.abs().max(1e-300));
        }
        for (a, b) in sys.mass.values().iter().zip(m.values()) {
            assert!((a - eps * eps * b).abs() <= 1e-14 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn mass_vector_sums_to_area() {
        let mesh = make_icosphere(4).unwrap();
        let sys = assemble_system(&mesh, &DensityField::constant(mesh.n_vertices(), 1.0).unwrap(), 1e-4).unwrap();
        let g: f64 = sys.mass_vector.iter().sum();
        assert!((g - mesh.total_area()).abs() <= 1e-12 * mesh.total_area());
        // Constant density: the mass matrix integrates constants exactly.
        let ones = vec![1.0; mesh.n_vertices()];
        let k = sys.mass.quad_form(&ones);
        assert!((k - (1.0 + 1e-8) * mesh.total_area()).abs() < 1e-11);
    }

    #[test]
    fn constant_vector_has_zero_gradient() {
        let mesh = make_icosphere(2).unwrap();
        let rho = DensityField::constant(mesh.n_vertices(), 0.3).unwrap();
        let ones = vec![1.0; mesh.n_vertices()];
        let g = eigenvalue_gradient(&mesh, &rho, 1e-4, 0.0, &ones).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn stale_pair_is_rejected() {
        let mesh = make_icosphere(2).unwrap();
        let rho = DensityField::constant(mesh.n_vertices(), 0.3).unwrap();
        let x: Vec<f64> = mesh.vertices().iter().map(|v| v[0] + v[1] * v[1]).collect();
        assert!(matches!(
            eigenvalue_gradient(&mesh, &rho, 1e-4, 2.0, &x),
            Err(Error::StaleEigenpair { .. })
        ));
        assert!(eigenvalue_gradient(&mesh, &rho, 1e-4, 2.0, &x[1..]).is_err());
    }

    #[test]
    fn adding_mass_increases_mass_form() {
        let mesh = make_icosphere(2).unwrap();
        let asm = Assembler::new(&mesh);
        let base = vec![0.2; mesh.n_vertices()];
        let k0 = asm
            .assemble(&DensityField::new(base.clone()).unwrap(), 1e-4)
            .unwrap()
            .mass;
        for l in [0, 17, 100] {
            let mut bumped = base.clone();
            bumped[l] += 0.1;
            let k1 = asm.assemble(&DensityField::new(bumped).unwrap(), 1e-4).unwrap().mass;
            let mut u = vec![0.0; mesh.n_vertices()];
            u[l] = 1.0;
            assert!(k1.quad_form(&u) > k0.quad_form(&u));
        }
    }
}
