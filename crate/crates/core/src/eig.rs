//! Smallest eigenpairs of the sparse symmetric pencil `M u = μ K u`.
//!
//! The main path is a block LOBPCG iteration in the K-inner product,
//! preconditioned by `(M + σK)⁻¹` with `σ = 10⁻³·tr(M)/tr(K)`. The inverse is
//! applied either through a sparse envelope Cholesky factor (default) or
//! through the diagonal. When the block stalls the solver switches to a
//! restarted shift-invert block Krylov method. Small problems are solved
//! densely.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::{self, Block};
use crate::error::{Error, Result};
use crate::fem::SparseSymSystem;
use crate::sparse::{reverse_cuthill_mckee, CsrMatrix, EnvelopeCholesky};

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    /// Inverse diagonal of `M + σK`.
    Jacobi,
    /// Sparse Cholesky factor of `M + σK`.
    Cholesky,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenOptions {
    /// Pairs are converged when
    /// `‖Mu − μKu‖ ≤ tol·‖Ku‖ + c·(‖M‖ + |μ|‖K‖)‖u‖` with `c` a small
    /// multiple of machine epsilon.
    pub tol: f64,
    pub max_iters: usize,
    /// Iterations without a halving of the worst residual before the
    /// Krylov fallback takes over.
    pub stall_window: usize,
    /// A stalled iteration whose residuals are all below this is accepted
    /// as converged.
    pub stall_accept: f64,
    /// Extra block columns beyond the requested count.
    pub guard: usize,
    pub seed: u64,
    pub preconditioner: Preconditioner,
    /// Relative shift of the preconditioned matrix, times `tr(M)/tr(K)`.
    pub shift_factor: f64,
    /// Problems up to this dimension are solved with dense linear algebra.
    pub dense_limit: usize,
    /// A Cholesky preconditioner is refactored after this many solves.
    /// Reuse across slowly varying pencils saves most of the setup cost.
    pub refactor_every: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iters: 5000,
            stall_window: 50,
            stall_accept: 1e-7,
            guard: 4,
            seed: 0x5eed,
            preconditioner: Preconditioner::Cholesky,
            shift_factor: 1e-3,
            dense_limit: 300,
            refactor_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub eigenvalues: Vec<f64>,
    /// K-orthonormal eigenvectors, one per eigenvalue.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Relative residuals `‖Mu − μKu‖ / ‖Ku‖`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// `count` smallest eigenpairs of the assembled system with default options.
pub fn solve_smallest(system: &SparseSymSystem, count: usize, tol: f64) -> Result<EigenResult> {
    let options = EigenOptions {
        tol,
        ..EigenOptions::default()
    };
    PencilSolver::new(options).solve(&system.stiffness, &system.mass, count, None)
}

/// `count` smallest eigenpairs of an arbitrary symmetric pencil.
pub fn solve_pencil(
    stiffness: &CsrMatrix,
    mass: &CsrMatrix,
    count: usize,
    options: EigenOptions,
) -> Result<EigenResult> {
    PencilSolver::new(options).solve(stiffness, mass, count, None)
}

/// Reusable solver for a sequence of pencils sharing one sparsity graph.
/// Caches the fill-reducing ordering and, when allowed, the preconditioner.
#[derive(Debug, Clone)]
pub struct PencilSolver {
    options: EigenOptions,
    ordering: Option<Vec<usize>>,
    factor: Option<EnvelopeCholesky>,
    factor_age: usize,
}

enum Precond<'a> {
    Jacobi(Vec<f64>),
    Factor(&'a EnvelopeCholesky),
}

impl Precond<'_> {
    fn apply(&self, r: &mut [f64]) {
        match self {
            Precond::Jacobi(d) => r.iter_mut().zip(d).for_each(|(x, d)| *x /= d),
            Precond::Factor(f) => f.solve_in_place(r),
        }
    }
}

struct Sub {
    v: Block,
    mv: Block,
    kv: Block,
}

enum Outcome {
    Converged(Vec<f64>),
    Stalled(Vec<f64>),
}

impl PencilSolver {
    pub fn new(options: EigenOptions) -> Self {
        Self {
            options,
            ordering: None,
            factor: None,
            factor_age: 0,
        }
    }

    /// Uses `perm` (`perm[new] = old`) for sparse factorizations.
    pub fn with_ordering(mut self, perm: Vec<usize>) -> Self {
        self.ordering = Some(perm);
        self
    }

    pub fn options(&self) -> &EigenOptions {
        &self.options
    }

    /// Smallest `count` eigenpairs. `start` vectors, when given, seed the
    /// initial block ahead of random vectors.
    pub fn solve(
        &mut self,
        stiffness: &CsrMatrix,
        mass: &CsrMatrix,
        count: usize,
        start: Option<&[Vec<f64>]>,
    ) -> Result<EigenResult> {
        let n = stiffness.dim();
        if mass.dim() != n {
            return Err(Error::structural("pencil dimensions", n, mass.dim()));
        }
        if count == 0 || count > n {
            return Err(Error::Size("eigenpair count must lie in 1..=dimension"));
        }
        if let Some(s) = start {
            if let Some(bad) = s.iter().find(|v| v.len() != n) {
                return Err(Error::structural("start vector length", n, bad.len()));
            }
        }
        if n <= self.options.dense_limit || 4 * count >= n {
            return dense_solve(stiffness, mass, count, self.options.tol);
        }
        self.sparse_solve(stiffness, mass, count, start)
    }

    fn sparse_solve(
        &mut self,
        m: &CsrMatrix,
        k: &CsrMatrix,
        count: usize,
        start: Option<&[Vec<f64>]>,
    ) -> Result<EigenResult> {
        let n = m.dim();
        let opts = self.options.clone();
        let k_trace = k.trace();
        if !(k_trace > 0.0) || k.diagonal().iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Assembly("mass matrix is not positive definite"));
        }
        let ratio = (m.trace() / k_trace).max(f64::MIN_POSITIVE);
        let shift = opts.shift_factor * ratio;
        let b = (count + opts.guard).min(n / 4).max(count);

        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut block = initial_block(m, k, n, b, start, &mut rng)?;
        let mut lambda = rayleigh_ritz_in_place(&mut block, b)?;
        let mut iterations = 0;

        let mut stale = self.factor.is_some() && self.factor_age < opts.refactor_every;
        let mut warm = start.is_some();
        loop {
            let precond = match opts.preconditioner {
                Preconditioner::Jacobi => {
                    let a = shifted(m, k, shift)?;
                    Precond::Jacobi(a.diagonal())
                }
                Preconditioner::Cholesky => {
                    if !stale || self.factor.as_ref().is_none_or(|f| f.dim() != n) {
                        let a = shifted(m, k, shift)?;
                        let perm = self.ordering_for(&a);
                        self.factor = Some(
                            EnvelopeCholesky::factor(&a, &perm)
                                .map_err(|_| Error::Assembly("M + σK is not positive definite"))?,
                        );
                        self.factor_age = 0;
                    }
                    self.factor_age += 1;
                    Precond::Factor(self.factor.as_ref().expect("factor present"))
                }
            };
            let (outcome, used) = lobpcg(m, k, count, b, &mut block, &mut lambda, &precond, &opts, iterations)?;
            iterations = used;
            match outcome {
                Outcome::Converged(residuals) => {
                    return Ok(finish(block, lambda, residuals, count, iterations, opts.tol));
                }
                Outcome::Stalled(residuals) => {
                    if residuals[..count].iter().all(|r| *r <= opts.stall_accept) {
                        return Ok(finish(block, lambda, residuals, count, iterations, opts.tol));
                    }
                    if iterations >= opts.max_iters {
                        return Err(convergence_error(iterations, &residuals[..count]));
                    }
                    // Retry with a fresh factor, then from a cold block, then go to Krylov.
                    if stale && opts.preconditioner == Preconditioner::Cholesky {
                        stale = false;
                    } else if warm {
                        warm = false;
                        block = initial_block(m, k, n, b, None, &mut rng)?;
                        lambda = rayleigh_ritz_in_place(&mut block, b)?;
                    } else {
                        break;
                    }
                }
            }
        }
        self.shift_invert(m, k, count, b, block, lambda, iterations)
    }

    fn ordering_for(&mut self, a: &CsrMatrix) -> Vec<usize> {
        match &self.ordering {
            Some(p) if p.len() == a.dim() => p.clone(),
            _ => {
                let p = reverse_cuthill_mckee(&a.adjacency());
                self.ordering = Some(p.clone());
                p
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn shift_invert(
        &mut self,
        m: &CsrMatrix,
        k: &CsrMatrix,
        count: usize,
        b: usize,
        mut block: Sub,
        mut lambda: Vec<f64>,
        mut iterations: usize,
    ) -> Result<EigenResult> {
        const DEPTH: usize = 5;
        let opts = self.options.clone();
        let top = lambda.last().copied().unwrap_or(0.0).abs();
        let ratio = (m.trace() / k.trace()).max(f64::MIN_POSITIVE);
        let sigma = (0.05 * top).max(1e-8 * ratio);
        let a = shifted(m, k, sigma)?;
        let perm = self.ordering_for(&a);
        let factor =
            EnvelopeCholesky::factor(&a, &perm).map_err(|_| Error::Assembly("M + σK is not positive definite"))?;
        let scale = Scale::new(m, k, opts.tol);
        let mut residuals = residual_norms(&block, &lambda, scale);
        let mut best_worst = f64::INFINITY;
        let mut last_improvement = iterations;
        while iterations < opts.max_iters {
            let mut blocks: Vec<(Block, Block)> = vec![(block.v.clone(), block.kv.clone())];
            for _ in 1..DEPTH {
                let last = &blocks.last().expect("nonempty").1;
                let next: Block = last
                    .iter()
                    .map(|kv| {
                        let mut y = kv.clone();
                        factor.solve_in_place(&mut y);
                        y
                    })
                    .collect();
                let bases: Vec<(&Block, &Block)> = blocks.iter().map(|(q, kq)| (q, kq)).collect();
                let (next, knext) = dense::project_out(next, &bases, |v| k.mul_vec(v));
                let (q, kq) = dense::svqb(next, knext, 1e-13)?;
                if q.is_empty() {
                    break;
                }
                blocks.push((q, kq));
            }
            let mut v = Vec::new();
            let mut kv = Vec::new();
            for (q, kq) in blocks {
                v.extend(q);
                kv.extend(kq);
            }
            let mv: Block = v.iter().map(|x| m.mul_vec(x)).collect();
            let mut basis = Sub { v, mv, kv };
            lambda = rayleigh_ritz_in_place(&mut basis, b)?;
            block = basis;
            iterations += DEPTH;
            residuals = residual_norms(&block, &lambda, scale);
            let worst = residuals[..count].iter().cloned().fold(0.0, f64::max);
            if worst <= opts.tol {
                return Ok(finish(block, lambda, residuals, count, iterations, opts.tol));
            }
            if worst < 0.5 * best_worst {
                best_worst = worst;
                last_improvement = iterations;
            } else if iterations - last_improvement >= opts.stall_window {
                break;
            }
        }
        if residuals[..count].iter().all(|r| *r <= opts.stall_accept) {
            return Ok(finish(block, lambda, residuals, count, iterations, opts.tol));
        }
        Err(convergence_error(iterations, &residuals[..count]))
    }
}

fn convergence_error(iterations: usize, residuals: &[f64]) -> Error {
    Error::Convergence {
        iterations,
        worst: residuals.iter().cloned().fold(0.0, f64::max),
        residuals: residuals.to_vec(),
    }
}

fn shifted(m: &CsrMatrix, k: &CsrMatrix, sigma: f64) -> Result<CsrMatrix> {
    if let Ok(a) = CsrMatrix::linear_combination(1.0, m, sigma, k) {
        return Ok(a);
    }
    let n = m.dim();
    let mut triplets = Vec::with_capacity(m.nnz() + k.nnz());
    for (mat, scale) in [(m, 1.0), (k, sigma)] {
        for i in 0..n {
            let (cols, vals) = mat.row(i);
            triplets.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, scale * v)));
        }
    }
    CsrMatrix::from_triplets(n, &triplets)
}

fn initial_block(
    m: &CsrMatrix,
    k: &CsrMatrix,
    n: usize,
    b: usize,
    start: Option<&[Vec<f64>]>,
    rng: &mut ChaCha8Rng,
) -> Result<Sub> {
    let mut v: Block = vec![vec![1.0; n]];
    if let Some(s) = start {
        v.extend(s.iter().take(b).cloned());
    }
    let mut kv: Block = v.iter().map(|x| k.mul_vec(x)).collect();
    let (mut q, mut kq) = dense::svqb(v, kv, 1e-10)?;
    // Top up with random vectors until the block is full rank.
    for _ in 0..8 {
        if q.len() >= b {
            break;
        }
        let extra: Block = (0..b - q.len())
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (extra, kextra) = dense::project_out(extra, &[(&q, &kq)], |v| k.mul_vec(v));
        let (e, ke) = dense::svqb(extra, kextra, 1e-10)?;
        q.extend(e);
        kq.extend(ke);
    }
    if q.len() < b {
        return Err(Error::Numerical("could not build a full-rank initial block"));
    }
    q.truncate(b);
    kq.truncate(b);
    kv = kq;
    let mv = q.iter().map(|x| m.mul_vec(x)).collect();
    Ok(Sub { v: q, mv, kv })
}

/// Rayleigh–Ritz on the span of `sub`, replacing it with the `keep` lowest
/// Ritz vectors. Returns their Ritz values.
fn rayleigh_ritz_in_place(sub: &mut Sub, keep: usize) -> Result<Vec<f64>> {
    let refs: Vec<&Vec<f64>> = sub.v.iter().collect();
    let mrefs: Vec<&Vec<f64>> = sub.mv.iter().collect();
    let krefs: Vec<&Vec<f64>> = sub.kv.iter().collect();
    let (vals, c) = ritz(&refs, &mrefs, &krefs)?;
    let keep = keep.min(vals.len());
    let v = dense::combine(&refs, &c, 0, keep);
    let mv = dense::combine(&mrefs, &c, 0, keep);
    let kv = dense::combine(&krefs, &c, 0, keep);
    *sub = Sub { v, mv, kv };
    Ok(vals[..keep].to_vec())
}

fn ritz(v: &[&Vec<f64>], mv: &[&Vec<f64>], kv: &[&Vec<f64>]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let s = v.len();
    let hm = DMatrix::from_fn(s, s, |i, j| dense::dot(v[i], mv[j]));
    let hk = DMatrix::from_fn(s, s, |i, j| dense::dot(v[i], kv[j]));
    dense::generalized_eigen(&hm, &hk)
}

/// Floor of attainable residuals relative to `(‖M‖ + |μ|‖K‖)‖u‖`.
const ROUNDOFF: f64 = 1024.0 * f64::EPSILON;

/// Pencil data entering the residual scale.
#[derive(Clone, Copy)]
struct Scale {
    m_norm: f64,
    k_norm: f64,
    tol: f64,
}

impl Scale {
    fn new(m: &CsrMatrix, k: &CsrMatrix, tol: f64) -> Self {
        Self {
            m_norm: m.norm_inf(),
            k_norm: k.norm_inf(),
            tol,
        }
    }
}

/// Residuals scaled so that `≤ tol` is the convergence test of
/// [`EigenOptions::tol`].
fn residual_norms(sub: &Sub, lambda: &[f64], scale: Scale) -> Vec<f64> {
    lambda
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let r: f64 = sub.mv[j]
                .iter()
                .zip(&sub.kv[j])
                .map(|(a, b)| (a - l * b) * (a - l * b))
                .sum::<f64>()
                .sqrt();
            let floor = ROUNDOFF / scale.tol * (scale.m_norm + l.abs() * scale.k_norm) * dense::norm(&sub.v[j]);
            r / (dense::norm(&sub.kv[j]) + floor).max(f64::MIN_POSITIVE)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn lobpcg(
    m: &CsrMatrix,
    k: &CsrMatrix,
    count: usize,
    b: usize,
    x: &mut Sub,
    lambda: &mut Vec<f64>,
    precond: &Precond<'_>,
    opts: &EigenOptions,
    mut iterations: usize,
) -> Result<(Outcome, usize)> {
    let scale = Scale::new(m, k, opts.tol);
    let mut p: Option<Sub> = None;
    let mut best_worst = f64::INFINITY;
    let mut last_improvement = iterations;
    loop {
        let residuals = residual_norms(x, lambda, scale);
        let worst = residuals[..count].iter().cloned().fold(0.0, f64::max);
        if worst <= opts.tol {
            return Ok((Outcome::Converged(residuals), iterations));
        }
        if iterations >= opts.max_iters {
            return Ok((Outcome::Stalled(residuals), iterations));
        }
        if worst < 0.5 * best_worst {
            best_worst = worst;
            last_improvement = iterations;
        } else if iterations - last_improvement >= opts.stall_window {
            return Ok((Outcome::Stalled(residuals), iterations));
        }

        let active: Vec<usize> = (0..b).filter(|&j| residuals[j] > opts.tol).collect();
        let w: Block = active
            .iter()
            .map(|&j| {
                let mut r: Vec<f64> = x.mv[j].iter().zip(&x.kv[j]).map(|(a, c)| a - lambda[j] * c).collect();
                precond.apply(&mut r);
                r
            })
            .collect();
        let (w, kw) = dense::project_out(w, &[(&x.v, &x.kv)], |v| k.mul_vec(v));
        let (w, kw) = dense::svqb(w, kw, 1e-14)?;
        let mw: Block = w.iter().map(|v| m.mul_vec(v)).collect();
        let wsub = Sub { v: w, mv: mw, kv: kw };

        let psub = match p.take() {
            Some(prev) => {
                let (pv, pkv) = dense::project_out(prev.v, &[(&x.v, &x.kv), (&wsub.v, &wsub.kv)], |v| k.mul_vec(v));
                let (pv, pkv) = dense::svqb(pv, pkv, 1e-14)?;
                let pmv = pv.iter().map(|v| m.mul_vec(v)).collect();
                Some(Sub {
                    v: pv,
                    mv: pmv,
                    kv: pkv,
                })
            }
            None => None,
        };
        if wsub.v.is_empty() && psub.as_ref().is_none_or(|s| s.v.is_empty()) {
            return Ok((Outcome::Stalled(residuals), iterations));
        }

        let attempt = |with_p: bool| {
            let mut refs: Vec<&Vec<f64>> = x.v.iter().chain(&wsub.v).collect();
            let mut mrefs: Vec<&Vec<f64>> = x.mv.iter().chain(&wsub.mv).collect();
            let mut krefs: Vec<&Vec<f64>> = x.kv.iter().chain(&wsub.kv).collect();
            if with_p {
                if let Some(ps) = &psub {
                    refs.extend(&ps.v);
                    mrefs.extend(&ps.mv);
                    krefs.extend(&ps.kv);
                }
            }
            ritz(&refs, &mrefs, &krefs).map(|(vals, c)| (vals, c, refs, mrefs, krefs))
        };
        let (vals, c, refs, mrefs, krefs) = match attempt(true) {
            Ok(r) => r,
            Err(_) => attempt(false)?,
        };
        let xv = dense::combine(&refs, &c, 0, b);
        let xmv = dense::combine(&mrefs, &c, 0, b);
        let xkv = dense::combine(&krefs, &c, 0, b);
        let pv = dense::combine(&refs[b..], &c, b, b);
        p = Some(Sub {
            v: pv,
            mv: Vec::new(),
            kv: Vec::new(),
        });
        *x = Sub {
            v: xv,
            mv: xmv,
            kv: xkv,
        };
        *lambda = vals[..b].to_vec();
        iterations += 1;
    }
}

fn finish(
    block: Sub,
    mut lambda: Vec<f64>,
    mut residuals: Vec<f64>,
    count: usize,
    iterations: usize,
    tol: f64,
) -> EigenResult {
    let scale = lambda.iter().fold(1.0f64, |a, l| a.max(l.abs()));
    for l in &mut lambda {
        if *l < 0.0 && *l > -tol * scale {
            *l = 0.0;
        }
    }
    lambda.truncate(count);
    residuals.truncate(count);
    let mut eigenvectors = block.v;
    eigenvectors.truncate(count);
    EigenResult {
        eigenvalues: lambda,
        eigenvectors,
        residuals,
        iterations,
    }
}

fn to_dense(a: &CsrMatrix) -> DMatrix<f64> {
    let n = a.dim();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            d[(i, j)] += v;
        }
    }
    d
}

fn dense_solve(m: &CsrMatrix, k: &CsrMatrix, count: usize, tol: f64) -> Result<EigenResult> {
    let (vals, vecs) = dense::generalized_eigen(&to_dense(m), &to_dense(k))?;
    let n = m.dim();
    let v: Block = (0..n).map(|j| vecs.column(j).iter().copied().collect()).collect();
    let mv: Block = v.iter().map(|x| m.mul_vec(x)).collect();
    let kv: Block = v.iter().map(|x| k.mul_vec(x)).collect();
    let block = Sub { v, mv, kv };
    let residuals = residual_norms(&block, &vals, Scale::new(m, k, tol));
    Ok(finish(block, vals, residuals, count, 0, tol))
}
