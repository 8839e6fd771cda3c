//! Small dense kernels on blocks of column vectors.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

pub type Block = Vec<Vec<f64>>;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `aᵀ b` for two blocks of columns.
pub fn gram(a: &Block, b: &Block) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| dot(&a[i], &b[j]))
}

/// Columns `Σ_i basis[i] · coeffs[(i, j)]` for `j < ncols`.
pub fn combine(basis: &[&Vec<f64>], coeffs: &DMatrix<f64>, row0: usize, ncols: usize) -> Block {
    let n = basis.first().map_or(0, |v| v.len());
    (0..ncols)
        .map(|j| {
            let mut out = vec![0.0; n];
            for (i, col) in basis.iter().enumerate() {
                let c = coeffs[(row0 + i, j)];
                if c != 0.0 {
                    axpy(c, col, &mut out);
                }
            }
            out
        })
        .collect()
}

/// Removes from `v` the components along the K-orthonormal block `x` whose
/// images are `kx` (two passes), then drops columns that lost all but a
/// `1e-10` fraction of their K-norm. Returns the survivors and their images.
pub fn project_out(mut v: Block, bases: &[(&Block, &Block)], apply_k: impl Fn(&[f64]) -> Vec<f64>) -> (Block, Block) {
    let before: Vec<f64> = v.iter().map(|c| dot(c, &apply_k(c)).abs().sqrt()).collect();
    for _ in 0..2 {
        for (x, kx) in bases {
            for vj in v.iter_mut() {
                for (xi, kxi) in x.iter().zip(kx.iter()) {
                    let c = dot(kxi, vj);
                    axpy(-c, xi, vj);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(v.len());
    let mut kout = Vec::with_capacity(v.len());
    for (vj, b) in v.into_iter().zip(before) {
        let kvj = apply_k(&vj);
        let after = dot(&vj, &kvj).abs().sqrt();
        if after > 1e-10 * b {
            out.push(vj);
            kout.push(kvj);
        }
    }
    (out, kout)
}

/// Orthonormalizes `v` in the inner product whose Gram images are `kv`
/// (SVQB). Directions with relative Gram eigenvalue below `drop_tol` are
/// discarded. Fails when the Gram matrix is clearly indefinite.
pub fn svqb(v: Block, kv: Block, drop_tol: f64) -> Result<(Block, Block)> {
    if v.is_empty() {
        return Ok((v, kv));
    }
    let g = gram(&v, &kv);
    let g = (&g + g.transpose()) * 0.5;
    let diag: Vec<f64> = (0..g.nrows()).map(|i| g[(i, i)]).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    if diag.iter().any(|d| !(d.is_finite()) || *d < -1e-10 * dmax) {
        return Err(Error::Assembly("mass matrix is not positive definite"));
    }
    if !(dmax > 0.0) {
        return Ok((Vec::new(), Vec::new()));
    }
    let scale: Vec<f64> = diag
        .iter()
        .map(|d| if *d > drop_tol * dmax { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let scaled = DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] * scale[i] * scale[j]);
    let eig = SymmetricEigen::new(scaled);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if lmin < -1e-6 * lmax.max(1.0) {
        return Err(Error::Assembly("mass matrix is not positive definite"));
    }
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > drop_tol * lmax)
        .collect();
    let coeffs = DMatrix::from_fn(v.len(), keep.len(), |i, j| {
        let c = keep[j];
        scale[i] * eig.eigenvectors[(i, c)] / eig.eigenvalues[c].sqrt()
    });
    let refs: Vec<&Vec<f64>> = v.iter().collect();
    let krefs: Vec<&Vec<f64>> = kv.iter().collect();
    let out = combine(&refs, &coeffs, 0, keep.len());
    let kout = combine(&krefs, &coeffs, 0, keep.len());
    Ok((out, kout))
}

/// Generalized symmetric eigenproblem `a x = λ b x` with `b` positive
/// definite. Eigenvalues ascend; eigenvectors are b-orthonormal columns.
pub fn generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let bs = (b + b.transpose()) * 0.5;
    let chol = Cholesky::new(bs).ok_or(Error::Assembly("mass matrix is not positive definite"))?;
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::Numerical("singular Cholesky factor"))?;
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let q = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    let vectors = linv.transpose() * q;
    Ok((values, vectors))
}
