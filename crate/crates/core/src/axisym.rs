//! Axially symmetric densities on the sphere, reduced to the colatitude
//! `θ ∈ [0, π]`.
//!
//! For `ρ = ρ(θ)`, the first nonzero eigenvalue is `min(a₀, b₁)`, where
//! `a` is the spectrum of the azimuthal mode 1 problem
//!
//! ```text
//! −((ρ sinθ + ε) y′)′ + (ρ + ε)/sinθ · y = a (ρ sinθ + ε²) y,   y(0) = y(π) = 0
//! ```
//!
//! and `b` that of the mode 0 problem without the zeroth-order term and
//! with natural end conditions. Both are discretized with P1 elements on a
//! uniform grid and solved by Sturm bisection plus inverse iteration.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::density::{
    check_continuation, cluster_size, default_continuation, project_feasible, projected_ascent, random_start,
    smoothed_min, AscentSettings, ClusterGap, SpectralModel, StepControl,
};
use crate::error::{Error, Result};
use crate::mesh::cap_radius_from_area;
use crate::trace::OptTrace;

/// Element count used by the cap reference curves.
pub const REFERENCE_ELEMENTS: usize = 10_000;

/// Nodal density on the uniform colatitude grid `θᵢ = iπ/N`, `i = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatitudeDensity {
    values: Vec<f64>,
}

impl LatitudeDensity {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 5 {
            return Err(Error::Size("a latitude density needs at least 4 elements"));
        }
        if let Some(&bad) = values.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::domain("density values must lie in [0, 1]", bad));
        }
        Ok(Self { values })
    }

    pub fn constant(elements: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; elements + 1])
    }

    /// Indicator of the polar cap `θ ≤ theta_max`, sampled at the nodes.
    pub fn cap(elements: usize, theta_max: f64) -> Result<Self> {
        let h = PI / elements as f64;
        Self::new(
            (0..=elements)
                .map(|i| if i as f64 * h <= theta_max { 1.0 } else { 0.0 })
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn elements(&self) -> usize {
        self.values.len() - 1
    }

    /// Mass `∫ ρ · 2π sinθ dθ` with the quadrature of [`latitude_mass_vector`].
    pub fn mass(&self) -> f64 {
        let g = latitude_mass_vector(self.elements());
        self.values.iter().zip(&g).map(|(a, b)| a * b).sum()
    }

    /// Reflection `θ ↦ π − θ`.
    pub fn reflected(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self { values }
    }
}

const GAUSS_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GAUSS_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Integrals on one element `[θ₀, θ₁]` with hats `ψ₀, ψ₁`. Symmetric 2×2
/// blocks are stored as `[00, 01, 11]`.
#[derive(Debug, Clone)]
struct Element {
    h: f64,
    /// `∫ ψ_a sinθ` for `a = 0, 1`.
    weighted: [f64; 2],
    /// `∫ ψ_a ψ_i ψ_j sinθ`.
    mass: [[f64; 3]; 2],
    /// `∫ ψ_a ψ_i ψ_j / sinθ`.
    singular: [[f64; 3]; 2],
}

impl Element {
    fn new(t0: f64, t1: f64) -> Self {
        let h = t1 - t0;
        // sin θ₁ − sin θ₀ without cancellation.
        let dsin = 2.0 * (0.5 * (t0 + t1)).cos() * (0.5 * h).sin();
        let weighted = [t0.cos() - dsin / h, -t1.cos() + dsin / h];
        let mut mass = [[0.0; 3]; 2];
        let mut singular = [[0.0; 3]; 2];
        for (x, w) in GAUSS_X.iter().zip(GAUSS_W) {
            let t = t0 + 0.5 * h * (1.0 + x);
            let psi = [(t1 - t) / h, (t - t0) / h];
            let s = t.sin();
            let wq = 0.5 * h * w;
            for a in 0..2 {
                let pairs = [psi[0] * psi[0], psi[0] * psi[1], psi[1] * psi[1]];
                for (q, pr) in pairs.iter().enumerate() {
                    mass[a][q] += wq * psi[a] * pr * s;
                    singular[a][q] += wq * psi[a] * pr / s;
                }
            }
        }
        Self {
            h,
            weighted,
            mass,
            singular,
        }
    }
}

/// Which separated problem to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Azimuthal mode 0: natural conditions at both ends.
    Zero,
    /// Azimuthal mode 1: `y(0) = 0`, and `y(θ_end) = 0` when `dirichlet_end`.
    One { dirichlet_end: bool },
}

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq)]
struct Tridiagonal {
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Tridiagonal {
    fn zeros(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            off: vec![0.0; n.saturating_sub(1)],
        }
    }

    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn add_local(&mut self, i: usize, local: [f64; 3]) {
        self.diag[i] += local[0];
        self.off[i] += local[1];
        self.diag[i + 1] += local[2];
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.off[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// Keeps rows and columns `first..first + len`.
    fn restrict(&self, first: usize, len: usize) -> Self {
        Self {
            diag: self.diag[first..first + len].to_vec(),
            off: self.off[first..first + len - 1].to_vec(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Number of eigenvalues of `a y = λ b y` below `sigma` (inertia of `a − σb`).
fn count_below(a: &Tridiagonal, b: &Tridiagonal, sigma: f64) -> usize {
    let n = a.dim();
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut count = 0;
    let mut d = a.diag[0] - sigma * b.diag[0];
    for i in 0..n {
        if i > 0 {
            let e = a.off[i - 1] - sigma * b.off[i - 1];
            d = a.diag[i] - sigma * b.diag[i] - e * e / d;
        }
        if d == 0.0 {
            d = -tiny;
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// Solves `(a − σb) x = r` by Gaussian elimination with partial pivoting.
fn shifted_solve(a: &Tridiagonal, b: &Tridiagonal, sigma: f64, r: &[f64]) -> Vec<f64> {
    let n = a.dim();
    let mut dl: Vec<f64> = (0..n.saturating_sub(1)).map(|i| a.off[i] - sigma * b.off[i]).collect();
    let mut d: Vec<f64> = (0..n).map(|i| a.diag[i] - sigma * b.diag[i]).collect();
    let mut du = dl.clone();
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut x = r.to_vec();
    let scale = d
        .iter()
        .chain(&dl)
        .fold(0.0f64, |s, v| s.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let tiny = f64::EPSILON * scale;
    for i in 0..n.saturating_sub(1) {
        if d[i].abs() >= dl[i].abs() {
            if d[i] == 0.0 {
                d[i] = tiny;
            }
            let f = dl[i] / d[i];
            d[i + 1] -= f * du[i];
            x[i + 1] -= f * x[i];
            dl[i] = f;
        } else {
            let f = d[i] / dl[i];
            d[i] = dl[i];
            let t = d[i + 1];
            d[i + 1] = du[i] - f * t;
            du[i] = t;
            if i + 2 < n {
                du2[i] = du[i + 1];
                du[i + 1] *= -f;
            }
            x.swap(i, i + 1);
            x[i + 1] -= f * x[i];
            dl[i] = f;
        }
    }
    if d[n - 1] == 0.0 {
        d[n - 1] = tiny;
    }
    x[n - 1] /= d[n - 1];
    if n > 1 {
        x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
    }
    x
}

/// Smallest `count` eigenpairs of the tridiagonal pencil `(a, b)`, `b`
/// positive definite. Eigenvectors are b-normalized.
fn tridiagonal_eigenpairs(a: &Tridiagonal, b: &Tridiagonal, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.dim();
    let count = count.min(n);
    let mut lo = -1.0;
    while count_below(a, b, lo) > 0 {
        lo *= 2.0;
        if lo < -1e300 {
            return Err(Error::Numerical("no lower bound for the 1D spectrum"));
        }
    }
    let mut hi = 1.0;
    while count_below(a, b, hi) < count {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numerical("no upper bound for the 1D spectrum"));
        }
    }
    let mut values: Vec<f64> = Vec::with_capacity(count);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
    for j in 0..count {
        // λ_j = sup { x : count_below(x) ≤ j }.
        let (mut l, mut u) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (l + u);
            if mid <= l || mid >= u {
                break;
            }
            if count_below(a, b, mid) <= j {
                l = mid;
            } else {
                u = mid;
            }
        }
        let lambda = 0.5 * (l + u);
        let gap_scale = 1e-9 * lambda.abs().max(1e-12);
        let mut y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * ((i * (j + 7)) as f64 * 0.618_034).sin())
            .collect();
        for _ in 0..4 {
            let mut rhs = b.mul(&y);
            for (v, &lv) in vectors.iter().zip(&values) {
                if (lv - lambda).abs() <= 1e3 * gap_scale + 1e-10 {
                    let c = dot(&rhs, v);
                    let bv = b.mul(v);
                    for (r, bvi) in rhs.iter_mut().zip(&bv) {
                        *r -= c * bvi;
                    }
                }
            }
            y = shifted_solve(a, b, lambda, &rhs);
            // Deflate again: the solve amplifies any residual component.
            for v in &vectors {
                let c = dot(&b.mul(&y), v);
                for (yi, vi) in y.iter_mut().zip(v) {
                    *yi -= c * vi;
                }
            }
            let norm = dot(&y, &b.mul(&y)).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Numerical("inverse iteration broke down"));
            }
            y.iter_mut().for_each(|v| *v /= norm);
        }
        let rq = dot(&y, &a.mul(&y));
        values.push(rq);
        vectors.push(y);
    }
    Ok((values, vectors))
}

/// Precomputed element integrals on a uniform grid of `[0, theta_end]`.
#[derive(Debug, Clone)]
struct LatitudeOperator {
    elements: Vec<Element>,
}

impl LatitudeOperator {
    fn new(n: usize, theta_end: f64) -> Self {
        let h = theta_end / n as f64;
        let elements = (0..n)
            .map(|e| {
                let t1 = if e + 1 == n { theta_end } else { (e + 1) as f64 * h };
                Element::new(e as f64 * h, t1)
            })
            .collect();
        Self { elements }
    }

    fn nodes(&self) -> usize {
        self.elements.len() + 1
    }

    /// Full nodal pencil for density `rho` and stiffness/mass shifts.
    fn assemble(&self, rho: &[f64], stiff_shift: f64, mass_shift: f64, mode: Mode) -> (Tridiagonal, Tridiagonal) {
        let n = self.nodes();
        let mut a = Tridiagonal::zeros(n);
        let mut b = Tridiagonal::zeros(n);
        for (e, el) in self.elements.iter().enumerate() {
            let (r0, r1) = (rho[e], rho[e + 1]);
            let c = (r0 * el.weighted[0] + r1 * el.weighted[1] + stiff_shift * el.h) / (el.h * el.h);
            let mut local = [c, -c, c];
            if let Mode::One { .. } = mode {
                for q in 0..3 {
                    local[q] += (r0 + stiff_shift) * el.singular[0][q] + (r1 + stiff_shift) * el.singular[1][q];
                }
            }
            a.add_local(e, local);
            let eps_mass = [el.h / 3.0, el.h / 6.0, el.h / 3.0];
            let mut m = [0.0; 3];
            for q in 0..3 {
                m[q] = r0 * el.mass[0][q] + r1 * el.mass[1][q] + mass_shift * eps_mass[q];
            }
            b.add_local(e, m);
        }
        (a, b)
    }

    /// Range of free nodes for `mode`.
    fn free_range(&self, mode: Mode) -> (usize, usize) {
        let n = self.nodes();
        match mode {
            Mode::Zero => (0, n),
            Mode::One { dirichlet_end: true } => (1, n - 2),
            Mode::One { dirichlet_end: false } => (1, n - 1),
        }
    }

    fn eigenpairs(
        &self,
        rho: &[f64],
        stiff_shift: f64,
        mass_shift: f64,
        mode: Mode,
        count: usize,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let (a, b) = self.assemble(rho, stiff_shift, mass_shift, mode);
        let (first, len) = self.free_range(mode);
        tridiagonal_eigenpairs(&a.restrict(first, len), &b.restrict(first, len), count)
    }

    /// `∂λ/∂ρ_l` for a b-normalized eigenvector on the free nodes of `mode`.
    fn gradient(&self, lambda: f64, y_free: &[f64], stiff_shift: f64, mode: Mode) -> Vec<f64> {
        let n = self.nodes();
        let (first, len) = self.free_range(mode);
        let mut y = vec![0.0; n];
        y[first..first + len].copy_from_slice(y_free);
        let mut grad = vec![0.0; n];
        let _ = stiff_shift;
        for (e, el) in self.elements.iter().enumerate() {
            let (y0, y1) = (y[e], y[e + 1]);
            let quad = |m: &[f64; 3]| m[0] * y0 * y0 + 2.0 * m[1] * y0 * y1 + m[2] * y1 * y1;
            let slope2 = (y1 - y0) * (y1 - y0) / (el.h * el.h);
            for a in 0..2 {
                let mut d = el.weighted[a] * slope2 - lambda * quad(&el.mass[a]);
                if let Mode::One { .. } = mode {
                    d += quad(&el.singular[a]);
                }
                grad[e + a] += d;
            }
        }
        grad
    }
}

/// Mass vector `g_l = 2π ∫ ψ_l sinθ` on `N` uniform elements of `[0, π]`.
pub fn latitude_mass_vector(elements: usize) -> Vec<f64> {
    let op = LatitudeOperator::new(elements, PI);
    let mut g = vec![0.0; elements + 1];
    for (e, el) in op.elements.iter().enumerate() {
        g[e] += 2.0 * PI * el.weighted[0];
        g[e + 1] += 2.0 * PI * el.weighted[1];
    }
    g
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::domain("epsilon must be positive", epsilon));
    }
    Ok(())
}

/// One tagged eigenvalue of the merged spectrum.
#[derive(Debug, Clone, Copy)]
struct Entry {
    value: f64,
    mode: Mode,
    index: usize,
}

/// [`SpectralModel`] of the regularized 1D pair. The spectrum is the mode 0
/// eigenvalue 0 followed by the sorted union of the mode 1 eigenvalues and
/// the nonzero mode 0 eigenvalues; each mode 1 value appears once.
pub struct AxisymModel {
    operator: LatitudeOperator,
    epsilon: f64,
    mass_vector: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    last: Option<(Vec<Entry>, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl AxisymModel {
    pub fn new(elements: usize, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if elements < 4 {
            return Err(Error::Size("at least 4 elements are needed"));
        }
        Ok(Self {
            operator: LatitudeOperator::new(elements, PI),
            epsilon,
            mass_vector: latitude_mass_vector(elements),
            neighbors: (0..=elements)
                .map(|i| {
                    [i.checked_sub(1), (i < elements).then_some(i + 1)]
                        .into_iter()
                        .flatten()
                        .collect()
                })
                .collect(),
            last: None,
        })
    }

    const MODE_ONE: Mode = Mode::One { dirichlet_end: true };
}

impl SpectralModel for AxisymModel {
    fn mass_vector(&self) -> &[f64] {
        &self.mass_vector
    }

    fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    fn set_epsilon(&mut self, epsilon: f64) -> Result<()> {
        check_epsilon(epsilon)?;
        self.epsilon = epsilon;
        Ok(())
    }

    fn eigenvalues(&mut self, rho: &[f64], count: usize) -> Result<Vec<f64>> {
        if rho.len() != self.operator.nodes() {
            return Err(Error::structural(
                "latitude density length",
                self.operator.nodes(),
                rho.len(),
            ));
        }
        let eps = self.epsilon;
        let (av, avec) = self.operator.eigenpairs(rho, eps, eps * eps, Self::MODE_ONE, count)?;
        let (bv, bvec) = self.operator.eigenpairs(rho, eps, eps * eps, Mode::Zero, count + 1)?;
        let mut entries: Vec<Entry> = av
            .iter()
            .enumerate()
            .map(|(index, &value)| Entry {
                value,
                mode: Self::MODE_ONE,
                index,
            })
            .chain(bv.iter().enumerate().skip(1).map(|(index, &value)| Entry {
                value,
                mode: Mode::Zero,
                index,
            }))
            .collect();
        entries.sort_by(|x, y| x.value.total_cmp(&y.value));
        entries.insert(
            0,
            Entry {
                value: bv[0].max(0.0),
                mode: Mode::Zero,
                index: 0,
            },
        );
        entries.truncate(count);
        let values = entries.iter().map(|e| e.value).collect();
        self.last = Some((entries, avec, bvec));
        Ok(values)
    }

    fn gradient(&mut self, index: usize) -> Result<Vec<f64>> {
        let (entries, avec, bvec) = self
            .last
            .as_ref()
            .ok_or(Error::Numerical("gradient requested before a solve"))?;
        let entry = entries
            .get(index)
            .ok_or(Error::Size("gradient index beyond computed eigenvalues"))?;
        let y = match entry.mode {
            Mode::Zero => &bvec[entry.index],
            Mode::One { .. } => &avec[entry.index],
        };
        Ok(self.operator.gradient(entry.value, y, self.epsilon, entry.mode))
    }
}

/// `μ₁` of an axisymmetric density: `min(a₀, b₁)` of the regularized pair.
pub fn axisym_mu1(rho: &LatitudeDensity, epsilon: f64) -> Result<f64> {
    let mut model = AxisymModel::new(rho.elements(), epsilon)?;
    Ok(model.eigenvalues(rho.values(), 2)?[1])
}

/// First nonzero Neumann eigenvalue of the polar cap of area `m`, from the
/// mode 1 problem on `(0, θ_m)` (`y(0) = 0`, `y′(θ_m) = 0`) and the mode 0
/// problem with natural conditions, using `elements` P1 elements.
pub fn cap_reference_mu1(m: f64, elements: usize) -> Result<f64> {
    if !(m > 0.0 && m < 4.0 * PI) {
        return Err(Error::domain("cap area must lie in (0, 4π)", m));
    }
    if elements < 4 {
        return Err(Error::Size("at least 4 elements are needed"));
    }
    let theta = cap_radius_from_area(m)?;
    let op = LatitudeOperator::new(elements, theta);
    let ones = vec![1.0; op.nodes()];
    let (a, _) = op.eigenpairs(&ones, 0.0, 0.0, Mode::One { dirichlet_end: false }, 1)?;
    let (b, _) = op.eigenpairs(&ones, 0.0, 0.0, Mode::Zero, 2)?;
    Ok(a[0].min(b[1]))
}

/// `μ₁` of the union of `k` disjoint caps of total area `m`, which equals
/// the cap value at area `m/k`.
pub fn union_of_k_balls(m: f64, k: usize, elements: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Size("k must be at least 1"));
    }
    cap_reference_mu1(m / k as f64, elements)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisymOptConfig {
    pub epsilon: f64,
    pub p: f64,
    pub cluster_gap: ClusterGap,
    /// ε values of the stages preceding the final one at `epsilon`.
    pub continuation: Vec<f64>,
    /// Iteration budget of each stage.
    pub max_iters: usize,
    pub polish: bool,
    pub restarts: usize,
    pub seed: u64,
    pub step: StepControl,
    /// Replaces the random start of restart 0 when given.
    pub initial_density: Option<Vec<f64>>,
}

impl Default for AxisymOptConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            p: 20.0,
            cluster_gap: ClusterGap::Relative(0.05),
            continuation: default_continuation(1e-4),
            max_iters: 300,
            polish: true,
            restarts: 4,
            seed: 1,
            step: StepControl::default(),
            initial_density: None,
        }
    }
}

impl AxisymOptConfig {
    /// Checks the settings against a run at mass `m` on `elements` elements.
    pub fn validate(&self, m: f64, elements: usize) -> Result<()> {
        if !(m > 0.0 && m < 4.0 * PI) {
            return Err(Error::domain("target mass must lie in (0, 4π)", m));
        }
        if elements < 4 {
            return Err(Error::Size("at least 4 elements are needed"));
        }
        check_epsilon(self.epsilon)?;
        if !(self.p >= 2.0) {
            return Err(Error::domain("smoothing exponent p must be at least 2", self.p));
        }
        if self.restarts == 0 {
            return Err(Error::Size("at least one restart is needed"));
        }
        check_continuation(&self.continuation, self.epsilon)
    }
}

/// Maximizes `μ₁` over axisymmetric densities of mass `m` on `elements`
/// elements.
pub fn optimize_density_1d(m: f64, elements: usize, config: &AxisymOptConfig) -> Result<(LatitudeDensity, OptTrace)> {
    let (rho, trace, _) = optimize_density_1d_detailed(m, elements, config)?;
    Ok((rho, trace))
}

/// Like [`optimize_density_1d`], also returning the final merged spectrum.
pub fn optimize_density_1d_detailed(
    m: f64,
    elements: usize,
    config: &AxisymOptConfig,
) -> Result<(LatitudeDensity, OptTrace, Vec<f64>)> {
    config.validate(m, elements)?;
    let mut model = AxisymModel::new(elements, config.epsilon)?;
    if let Some(init) = &config.initial_density {
        if init.len() != elements + 1 {
            return Err(Error::structural("initial density length", elements + 1, init.len()));
        }
    }
    let mut schedule = config.continuation.clone();
    schedule.push(config.epsilon);
    let settings = AscentSettings {
        k: 1,
        target_mass: m,
        p: config.p,
        cluster_gap: config.cluster_gap,
        schedule,
        max_iters: config.max_iters,
        polish: config.polish,
        restarts: config.restarts,
        seed: config.seed,
        step: config.step.clone(),
    };
    let g = model.mass_vector().to_vec();
    let warm = config.initial_density.clone();
    let outcome = projected_ascent(&mut model, &settings, None, |restart, rng| match (&warm, restart) {
        (Some(init), 0) => Ok(project_feasible(init, &g, m, None)?.into_values()),
        _ => random_start(&g, m, None, rng),
    })?;
    let density = LatitudeDensity::new(outcome.density.iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
    Ok((density, outcome.trace, outcome.eigenvalues))
}

/// `h(N) = N/π ∫ ρ(1 − ρ) dθ`, trapezoid rule on the grid.
pub fn dispersion(rho: &LatitudeDensity) -> f64 {
    let n = rho.elements();
    let h = PI / n as f64;
    let f: Vec<f64> = rho.values().iter().map(|r| r * (1.0 - r)).collect();
    let integral = h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[n]));
    n as f64 / PI * integral
}

/// `h(N)/h(N₀)` for each `N` of `elements` (ascending, `N₀` first), each
/// from an independent 1D optimization at mass `m`.
pub fn dispersion_ratio(m: f64, elements: &[usize], config: &AxisymOptConfig) -> Result<Vec<f64>> {
    if elements.is_empty() || elements.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Size("element counts must be nonempty and strictly ascending"));
    }
    let h: Vec<f64> = elements
        .iter()
        .map(|&n| optimize_density_1d(m, n, config).map(|(rho, _)| dispersion(&rho)))
        .collect::<Result<_>>()?;
    ratios(&h)
}

/// Normalizes a dispersion series by its first entry.
pub fn ratios(h: &[f64]) -> Result<Vec<f64>> {
    let h0 = h[0];
    if !(h0 > 0.0) {
        return Err(Error::Numerical("reference dispersion vanishes, ratio undefined"));
    }
    Ok(h.iter().map(|v| v / h0).collect())
}

/// Smoothed objective of a merged 1D spectrum; exposed for diagnostics.
pub fn smoothed_mu1(eigs: &[f64], p: f64, gap: ClusterGap) -> Result<f64> {
    let c = cluster_size(eigs, 1, gap.threshold(eigs[1]));
    smoothed_min(&eigs[1..1 + c], p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solver_matches_dense_laplacian() {
        // Dirichlet Laplacian on 50 interior points: λ_j = 4 sin²(jπ/102)·…
        let n = 50;
        let a = Tridiagonal {
            diag: vec![2.0; n],
            off: vec![-1.0; n - 1],
        };
        let b = Tridiagonal {
            diag: vec![1.0; n],
            off: vec![0.0; n - 1],
        };
        let (vals, vecs) = tridiagonal_eigenpairs(&a, &b, 4).unwrap();
        for (j, v) in vals.iter().enumerate() {
            let s = ((j + 1) as f64 * PI / (2.0 * (n + 1) as f64)).sin();
            assert!((v - 4.0 * s * s).abs() < 1e-13, "{v}");
        }
        for i in 0..4 {
            for j in 0..4 {
                let d = dot(&vecs[i], &vecs[j]);
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn shifted_solve_with_pivoting() {
        let a = Tridiagonal {
            diag: vec![0.0, 1.0, 3.0, 1.0],
            off: vec![2.0, -1.0, 0.5],
        };
        let b = Tridiagonal::zeros(4);
        let x = [1.0, -2.0, 0.5, 3.0];
        let r = a.mul(&x);
        let y = shifted_solve(&a, &b, 0.0, &r);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn mass_vector_integrates_sphere() {
        let g = latitude_mass_vector(100);
        assert!((g.iter().sum::<f64>() - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn problem_b_has_constant_kernel() {
        let op = LatitudeOperator::new(40, PI);
        let rho: Vec<f64> = (0..41).map(|i| 0.3 + 0.5 * ((i as f64) * 0.3).sin().abs()).collect();
        let (a, _) = op.assemble(&rho, 1e-4, 1e-8, Mode::Zero);
        let r = a.mul(&[1.0; 41]);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        let (a1, _) = op.assemble(&rho, 1e-4, 1e-8, Mode::One { dirichlet_end: true });
        let inner = a1.restrict(1, 39);
        assert!(
            count_below(
                &inner,
                &op.assemble(&rho, 1e-4, 1e-8, Mode::Zero).1.restrict(1, 39),
                1e-6
            ) == 0
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let n = 60;
        let mut model = AxisymModel::new(n, 1e-3).unwrap();
        let rho: Vec<f64> = (0..=n)
            .map(|i| 0.2 + 0.6 * ((i as f64) / n as f64 * 2.5).sin().powi(2))
            .collect();
        let eigs = model.eigenvalues(&rho, 4).unwrap();
        for idx in 1..3 {
            model.eigenvalues(&rho, 4).unwrap();
            let grad = model.gradient(idx).unwrap();
            for l in [0, 7, 30, 59] {
                let h = 1e-6;
                let mut up = rho.clone();
                up[l] += h;
                let mut down = rho.clone();
                down[l] -= h;
                let fd =
                    (model.eigenvalues(&up, 4).unwrap()[idx] - model.eigenvalues(&down, 4).unwrap()[idx]) / (2.0 * h);
                assert!(
                    (grad[l] - fd).abs() <= 1e-5 * fd.abs().max(1e-3 * eigs[idx]),
                    "idx {idx} l {l}: {} vs {fd}",
                    grad[l]
                );
            }
        }
    }

    #[test]
    fn sphere_and_reflection() {
        let rho = LatitudeDensity::constant(10_000, 1.0).unwrap();
        let mu = axisym_mu1(&rho, 1e-6).unwrap();
        assert!((mu - 2.0).abs() < 1e-3, "{mu}");
        let bumpy = LatitudeDensity::new((0..=400).map(|i| 0.5 + 0.4 * ((i as f64) * 0.05).cos()).collect()).unwrap();
        let a = axisym_mu1(&bumpy, 1e-4).unwrap();
        let b = axisym_mu1(&bumpy.reflected(), 1e-4).unwrap();
        assert!((a - b).abs() <= 1e-8 * a);
    }

    #[test]
    fn cap_reference_values() {
        let hemi = cap_reference_mu1(2.0 * PI, REFERENCE_ELEMENTS).unwrap();
        assert!((hemi - 2.0).abs() < 1e-4, "{hemi}");
        let small = cap_reference_mu1(0.1, REFERENCE_ELEMENTS).unwrap();
        let disk = 1.84118f64.powi(2) * PI / 0.1;
        assert!((small - disk).abs() < 0.03 * disk, "{small} {disk}");
        assert!(cap_reference_mu1(0.0, 100).is_err());
        assert!(cap_reference_mu1(4.0 * PI, 100).is_err());
        assert_eq!(
            union_of_k_balls(2.31, 2, 2000).unwrap(),
            cap_reference_mu1(1.155, 2000).unwrap()
        );
    }

    #[test]
    fn dispersion_examples() {
        let sharp = LatitudeDensity::cap(100, 1.0).unwrap();
        assert_eq!(dispersion(&sharp), 0.0);
        let half = LatitudeDensity::constant(100, 0.5).unwrap();
        assert!((dispersion(&half) - 25.0).abs() < 1e-12);
        assert!(ratios(&[0.0, 1.0]).is_err());
    }
}
