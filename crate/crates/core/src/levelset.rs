//! Ersatz-material level-set maximization of `μ_k` over domains
//! `Ω = {φ < 0}` on a fixed surface mesh.
//!
//! Each step solves the ε-regularized pencil for the smoothed indicator of
//! `Ω`, builds the normal velocity of the cost
//! `J = |Ω| μ_k − b (|Ω| − m′)²`, smooths it with a screened Laplacian and
//! advects `φ` by `∂_t φ + v |∇φ| = 0`. The level set is periodically reset
//! to a signed distance by fast marching.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::density::{cluster_size, smoothed_min, smoothed_min_gradient, ClusterGap, CLUSTER_WINDOW};
use crate::eig::{EigenOptions, EigenResult, PencilSolver};
use crate::error::{Error, Result};
use crate::fem::Assembler;
use crate::geom::{self, Vec3};
use crate::mesh::{DensityField, SurfaceMesh};
use crate::sparse::{CsrMatrix, EnvelopeCholesky};
use crate::trace::{OptTrace, TraceFailure, TraceRecord};

/// Nodal level-set function with its smoothing width.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetField {
    pub phi: Vec<f64>,
    /// Width of the smoothed indicator.
    pub sigma_s: f64,
    /// Steps between two redistancing passes.
    pub redistance_period: usize,
}

impl LevelSetField {
    pub fn new(phi: Vec<f64>, sigma_s: f64, redistance_period: usize) -> Result<Self> {
        if !(sigma_s > 0.0) {
            return Err(Error::domain("indicator smoothing must be positive", sigma_s));
        }
        if redistance_period == 0 {
            return Err(Error::Size("redistance period must be at least 1"));
        }
        if let Some(bad) = phi.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain("level set values must be finite", *bad));
        }
        Ok(Self {
            phi,
            sigma_s,
            redistance_period,
        })
    }

    fn with_phi(&self, phi: Vec<f64>) -> Self {
        Self { phi, ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetConfig {
    /// Eigenvalue index, `k ≥ 1`.
    pub k: usize,
    pub epsilon: f64,
    pub sigma_s: f64,
    /// Step scale: `δt = γ / ‖v‖_∞` in the fixed-budget phase.
    pub gamma: f64,
    /// Area penalty weight.
    pub b: f64,
    /// Target-area parameter `m′` of the penalty.
    pub target_area: f64,
    /// Steps of the fixed-budget phase.
    pub n_steps: usize,
    /// Largest step count of the adaptive phase.
    pub adaptive_steps: usize,
    /// The adaptive phase stops once `δt` falls below this.
    pub min_step: f64,
    /// Highest frequencies of the random trigonometric initialization in the
    /// first and second surface parameter.
    pub trig_degrees: (usize, usize),
    pub seed: u64,
    pub restarts: usize,
    /// Screening length of the velocity smoother; 0 disables smoothing.
    pub alpha: f64,
    pub redistance_period: usize,
    pub p: f64,
    pub cluster_gap: ClusterGap,
    pub eigen: EigenOptions,
    /// Replaces the random start of restart 0 when given.
    pub initial_phi: Option<Vec<f64>>,
}

impl LevelSetConfig {
    pub fn new(k: usize, target_area: f64) -> Self {
        Self {
            k,
            epsilon: 1e-4,
            sigma_s: 1e-5,
            gamma: 3e-2,
            b: 5.0,
            target_area,
            n_steps: 600,
            adaptive_steps: 200,
            min_step: 1e-7,
            trig_degrees: (3, 3),
            seed: 1,
            restarts: 4,
            alpha: 0.1,
            redistance_period: 20,
            p: 20.0,
            cluster_gap: ClusterGap::Relative(0.05),
            eigen: EigenOptions::default(),
            initial_phi: None,
        }
    }

    pub fn validate(&self, mesh: &SurfaceMesh) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Size("eigenvalue index k must be at least 1"));
        }
        let area = mesh.total_area();
        if !(self.target_area > 0.0 && self.target_area < area) {
            return Err(Error::domain("target area must lie in (0, area)", self.target_area));
        }
        for (what, value) in [
            ("epsilon must be positive", self.epsilon),
            ("indicator smoothing must be positive", self.sigma_s),
            ("gamma must be positive", self.gamma),
            ("penalty weight must be positive", self.b),
            ("minimum step must be positive", self.min_step),
        ] {
            if !(value > 0.0) {
                return Err(Error::domain(what, value));
            }
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::domain("alpha must be nonnegative", self.alpha));
        }
        if !(self.p >= 2.0) {
            return Err(Error::domain("smoothing exponent p must be at least 2", self.p));
        }
        if self.restarts == 0 || self.redistance_period == 0 {
            return Err(Error::Size("restarts and redistance period must be at least 1"));
        }
        if let Some(phi) = &self.initial_phi {
            if phi.len() != mesh.n_vertices() {
                return Err(Error::structural(
                    "initial level set length",
                    mesh.n_vertices(),
                    phi.len(),
                ));
            }
        }
        Ok(())
    }
}

/// `φ(s, t) = Re Σ_{j≤p, l≤q} c_{jl} e^{i(j s + l t)}` in the surface
/// parameters `(s, t)` of each vertex, with complex Gaussian `c_{jl}` drawn
/// from `seed`, scaled to `max |φ| = 1`.
pub fn init_random_levelset(mesh: &SurfaceMesh, p: usize, q: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<(usize, usize, f64, f64)> = (0..=p)
        .flat_map(|j| (0..=q).map(move |l| (j, l)))
        .map(|(j, l)| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            (j, l, re, im)
        })
        .collect();
    let mut phi: Vec<f64> = (0..mesh.n_vertices())
        .map(|i| {
            let (s, t) = mesh.parameters(i);
            coeffs
                .iter()
                .map(|&(j, l, re, im)| {
                    let arg = j as f64 * s + l as f64 * t;
                    re * arg.cos() - im * arg.sin()
                })
                .sum()
        })
        .collect();
    let max = phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max > 0.0 {
        phi.iter_mut().for_each(|v| *v /= max);
    }
    phi
}

/// `½(1 − φ/√(φ² + σ²))` at every vertex.
pub fn smoothed_indicator(ls: &LevelSetField) -> DensityField {
    let s2 = ls.sigma_s * ls.sigma_s;
    DensityField::clipped(ls.phi.iter().map(|&p| 0.5 * (1.0 - p / (p * p + s2).sqrt())).collect())
}

/// Area of `{φ < 0}` for the piecewise linear interpolant of `phi` on the
/// flat triangles.
pub fn domain_area(mesh: &SurfaceMesh, phi: &[f64]) -> f64 {
    mesh.triangles()
        .iter()
        .zip(mesh.areas())
        .map(|(t, &area)| area * negative_fraction([phi[t[0]], phi[t[1]], phi[t[2]]]))
        .sum()
}

/// Fraction of a triangle where the linear interpolant of `f` is negative.
fn negative_fraction(f: [f64; 3]) -> f64 {
    let neg = f.iter().filter(|&&v| v < 0.0).count();
    match neg {
        0 => 0.0,
        3 => 1.0,
        _ => {
            // The lone vertex on its own side cuts off a similar triangle.
            let lone_negative = neg == 1;
            let a = (0..3).find(|&i| (f[i] < 0.0) == lone_negative).expect("lone vertex");
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            let corner = f[a] / (f[a] - f[b]) * (f[a] / (f[a] - f[c]));
            if lone_negative {
                corner
            } else {
                1.0 - corner
            }
        }
    }
}

/// Constant gradient of the linear interpolant of `f` on triangle `t`.
fn triangle_gradient(mesh: &SurfaceMesh, t: usize, f: &[f64]) -> Vec3 {
    let tri = mesh.triangles()[t];
    let g = mesh.gradients(t);
    geom::add(
        geom::add(geom::scale(g[0], f[tri[0]]), geom::scale(g[1], f[tri[1]])),
        geom::scale(g[2], f[tri[2]]),
    )
}

/// `|∇f|` on every triangle.
pub fn triangle_gradient_norms(mesh: &SurfaceMesh, f: &[f64]) -> Vec<f64> {
    (0..mesh.n_triangles())
        .map(|t| geom::norm(triangle_gradient(mesh, t, f)))
        .collect()
}

/// Area-weighted average over incident triangles of a per-triangle value.
fn nodal_average(mesh: &SurfaceMesh, per_triangle: &[f64]) -> Vec<f64> {
    let n = mesh.n_vertices();
    let mut sum = vec![0.0; n];
    let mut weight = vec![0.0; n];
    for ((tri, &area), &v) in mesh.triangles().iter().zip(mesh.areas()).zip(per_triangle) {
        for &i in tri {
            sum[i] += area * v;
            weight[i] += area;
        }
    }
    sum.iter().zip(&weight).map(|(s, w)| s / w).collect()
}

/// Value, velocity and spectrum of one level-set iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVelocity {
    /// `J = area · μ − b (area − m′)²`.
    pub cost: f64,
    /// Raw normal velocity; positive values grow `Ω`.
    pub velocity: Vec<f64>,
    /// Smoothed minimum of the cluster at `μ_k`.
    pub mu: f64,
    /// Mass of the smoothed indicator.
    pub area: f64,
    pub eigenvalues: Vec<f64>,
    pub cluster_size: usize,
}

/// Screened-Laplacian smoother `(αM₁ + K₁) w = K₁ v` with the plain
/// stiffness `M₁` and mass `K₁`, factored once.
#[derive(Debug, Clone)]
pub struct VelocitySmoother {
    mass: CsrMatrix,
    factor: EnvelopeCholesky,
}

impl VelocitySmoother {
    pub fn new(assembler: &Assembler<'_>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::domain("alpha must be positive", alpha));
        }
        let (stiffness, mass) = assembler.plain_matrices();
        let a = CsrMatrix::linear_combination(alpha, &stiffness, 1.0, &mass)?;
        let factor = EnvelopeCholesky::factor(&a, assembler.ordering())
            .map_err(|_| Error::Numerical("screened Laplacian is not positive definite"))?;
        Ok(Self { mass, factor })
    }

    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.mass.dim() {
            return Err(Error::structural("velocity length", self.mass.dim(), raw.len()));
        }
        let w = self.factor.solve(&self.mass.mul_vec(raw));
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("velocity smoothing produced non-finite values"));
        }
        Ok(w)
    }
}

/// Smooths a nodal velocity over the whole surface; see [`VelocitySmoother`].
pub fn regularize_velocity(mesh: &SurfaceMesh, raw: &[f64], alpha: f64) -> Result<Vec<f64>> {
    VelocitySmoother::new(&Assembler::new(mesh), alpha)?.apply(raw)
}

/// Reusable ersatz solver for level sets on one mesh.
pub struct LevelSetModel<'a> {
    mesh: &'a SurfaceMesh,
    assembler: Assembler<'a>,
    solver: PencilSolver,
    warm: Option<Vec<Vec<f64>>>,
}

impl<'a> LevelSetModel<'a> {
    pub fn new(mesh: &'a SurfaceMesh, eigen: EigenOptions) -> Self {
        let assembler = Assembler::new(mesh);
        let solver = PencilSolver::new(eigen).with_ordering(assembler.ordering().to_vec());
        Self {
            mesh,
            assembler,
            solver,
            warm: None,
        }
    }

    pub fn assembler(&self) -> &Assembler<'a> {
        &self.assembler
    }

    /// Cost and raw velocity of `ls` under `config`.
    pub fn evaluate(&mut self, ls: &LevelSetField, config: &LevelSetConfig) -> Result<CostVelocity> {
        let k = config.k;
        let rho = smoothed_indicator(ls);
        let area = rho.mass(self.assembler.mass_vector());
        let system = self.assembler.assemble(&rho, config.epsilon)?;
        let count = (k + CLUSTER_WINDOW).min(self.mesh.n_vertices());
        let result = self
            .solver
            .solve(&system.stiffness, &system.mass, count, self.warm.as_deref())?;
        self.warm = Some(result.eigenvectors.clone());
        let eigs = &result.eigenvalues;
        if k >= eigs.len() {
            return Err(Error::Size("eigenvalue index beyond computed eigenpairs"));
        }
        let cluster = cluster_size(eigs, k, config.cluster_gap.threshold(eigs[k]));
        let values = &eigs[k..k + cluster];
        let mu = smoothed_min(values, config.p)?;
        let fields: Vec<Vec<f64>> = (k..k + cluster).map(|i| self.shape_field(&result, i)).collect();
        let w = smoothed_min_gradient(values, &fields, config.p)?;
        let constant = mu - 2.0 * config.b * (area - config.target_area);
        let velocity = w.iter().map(|wi| area * wi + constant).collect();
        Ok(CostVelocity {
            cost: area * mu - config.b * (area - config.target_area) * (area - config.target_area),
            velocity,
            mu,
            area,
            eigenvalues: result.eigenvalues.clone(),
            cluster_size: cluster,
        })
    }

    /// Nodal `|∇u|² − μ u²` of eigenpair `index`.
    fn shape_field(&self, result: &EigenResult, index: usize) -> Vec<f64> {
        let u = &result.eigenvectors[index];
        let mu = result.eigenvalues[index];
        let grad2: Vec<f64> = (0..self.mesh.n_triangles())
            .map(|t| {
                let g = triangle_gradient(self.mesh, t, u);
                geom::dot(g, g)
            })
            .collect();
        nodal_average(self.mesh, &grad2)
            .iter()
            .zip(u)
            .map(|(g2, ui)| g2 - mu * ui * ui)
            .collect()
    }
}

/// Cost `J`, raw velocity, smoothed `μ_k` and area of one level set.
pub fn cost_and_velocity(mesh: &SurfaceMesh, ls: &LevelSetField, config: &LevelSetConfig) -> Result<CostVelocity> {
    LevelSetModel::new(mesh, config.eigen.clone()).evaluate(ls, config)
}

/// Explicit nodal update `φ ← φ − δt v |∇φ|`, with `|∇φ|` at a vertex the
/// area-weighted mean of the incident triangle gradient norms. The step is
/// split so that each substep moves the front by at most half the shortest
/// edge.
pub fn advect(mesh: &SurfaceMesh, ls: &LevelSetField, v: &[f64], dt: f64) -> Result<LevelSetField> {
    if v.len() != ls.len() {
        return Err(Error::structural("velocity length", ls.len(), v.len()));
    }
    if !(dt > 0.0) {
        return Err(Error::domain("time step must be positive", dt));
    }
    let vmax = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if !vmax.is_finite() {
        return Err(Error::domain("velocity must be finite", vmax));
    }
    let mut phi = ls.phi.clone();
    if vmax == 0.0 {
        return Ok(ls.with_phi(phi));
    }
    let limit = 0.5 * mesh.min_edge_length() / vmax;
    let substeps = (dt / limit).ceil().max(1.0) as usize;
    let h = dt / substeps as f64;
    for _ in 0..substeps {
        let grad = nodal_average(mesh, &triangle_gradient_norms(mesh, &phi));
        for ((p, vi), g) in phi.iter_mut().zip(v).zip(&grad) {
            *p -= h * vi * g;
        }
    }
    Ok(ls.with_phi(phi))
}

/// Outcome of [`redistance`].
#[derive(Debug, Clone, PartialEq)]
pub struct Redistanced {
    pub field: LevelSetField,
    /// False when `φ` has no sign change; the field is then unchanged.
    pub has_interface: bool,
}

/// Signed distance to the zero set of the linear interpolant of `φ`.
///
/// Vertices of triangles cut by the zero set get their exact distance to
/// the cut segment inside the triangle; the rest follow by fast marching
/// with the two-vertex triangle update, falling back to edge updates when
/// the characteristic leaves the triangle. Signs follow the input.
pub fn redistance(mesh: &SurfaceMesh, ls: &LevelSetField) -> Result<Redistanced> {
    let phi = &ls.phi;
    if phi.len() != mesh.n_vertices() {
        return Err(Error::structural("level set length", mesh.n_vertices(), phi.len()));
    }
    let has_neg = phi.iter().any(|&p| p < 0.0);
    let has_nonneg = phi.iter().any(|&p| p >= 0.0);
    if !(has_neg && has_nonneg) {
        return Ok(Redistanced {
            field: ls.clone(),
            has_interface: false,
        });
    }
    let verts = mesh.vertices();
    let n = mesh.n_vertices();
    let mut dist = vec![f64::INFINITY; n];
    let mut frozen = vec![false; n];

    for tri in mesh.triangles() {
        let mut points: Vec<Vec3> = Vec::with_capacity(3);
        for e in 0..3 {
            let (a, b) = (tri[e], tri[(e + 1) % 3]);
            if phi[a] == 0.0 {
                points.push(verts[a]);
            } else if (phi[a] < 0.0) != (phi[b] < 0.0) && phi[b] != 0.0 {
                let t = phi[a] / (phi[a] - phi[b]);
                points.push(geom::add(verts[a], geom::scale(geom::sub(verts[b], verts[a]), t)));
            }
        }
        if points.is_empty() {
            continue;
        }
        for &i in tri {
            let d = match points.len() {
                1 => geom::norm(geom::sub(verts[i], points[0])),
                2 => geom::point_segment_distance(verts[i], points[0], points[1]),
                _ => 0.0,
            };
            if d < dist[i] {
                dist[i] = d;
            }
            frozen[i] = true;
        }
    }

    let incident = vertex_triangles(mesh);
    let mut accepted = frozen.clone();
    let mut heap: BinaryHeap<Trial> = BinaryHeap::new();
    for s in (0..n).filter(|&i| frozen[i]) {
        relax_around(mesh, &incident, s, &accepted, &mut dist, &mut heap);
    }
    while let Some(Trial { dist: d, vertex }) = heap.pop() {
        if accepted[vertex] || d > dist[vertex] {
            continue;
        }
        accepted[vertex] = true;
        relax_around(mesh, &incident, vertex, &accepted, &mut dist, &mut heap);
    }
    if dist.iter().any(|d| !d.is_finite()) {
        return Err(Error::Geometry("fast marching did not reach every vertex"));
    }
    let signed = phi
        .iter()
        .zip(&dist)
        .map(|(&p, &d)| if p < 0.0 { -d } else { d })
        .collect();
    Ok(Redistanced {
        field: ls.with_phi(signed),
        has_interface: true,
    })
}

#[derive(Debug, Clone, Copy)]
struct Trial {
    dist: f64,
    vertex: usize,
}

impl PartialEq for Trial {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Trial {}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Trial {
    // Reversed for a min-heap; ties broken by vertex index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

fn vertex_triangles(mesh: &SurfaceMesh) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); mesh.n_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for &i in tri {
            out[i].push(t);
        }
    }
    out
}

/// Updates the tentative distances of the unaccepted vertices of every
/// triangle around the newly accepted vertex `s`.
fn relax_around(
    mesh: &SurfaceMesh,
    incident: &[Vec<usize>],
    s: usize,
    accepted: &[bool],
    dist: &mut [f64],
    heap: &mut BinaryHeap<Trial>,
) {
    let verts = mesh.vertices();
    for &t in &incident[s] {
        let tri = mesh.triangles()[t];
        for c in 0..3 {
            let target = tri[c];
            if accepted[target] {
                continue;
            }
            let (a, b) = (tri[(c + 1) % 3], tri[(c + 2) % 3]);
            let mut best = dist[target];
            for &x in &[a, b] {
                if accepted[x] {
                    best = best.min(dist[x] + geom::norm(geom::sub(verts[target], verts[x])));
                }
            }
            if accepted[a] && accepted[b] {
                if let Some(d) = triangle_update(verts[target], verts[a], verts[b], dist[a], dist[b]) {
                    best = best.min(d);
                }
            }
            if best < dist[target] {
                dist[target] = best;
                heap.push(Trial {
                    dist: best,
                    vertex: target,
                });
            }
        }
    }
}

/// Distance at `c` from a planar front through `a` and `b` carrying the
/// values `ta`, `tb`, when the characteristic reaching `c` crosses `[a, b]`.
fn triangle_update(c: Vec3, a: Vec3, b: Vec3, ta: f64, tb: f64) -> Option<f64> {
    let e1 = geom::sub(a, c);
    let e2 = geom::sub(b, c);
    let (g11, g12, g22) = (geom::dot(e1, e1), geom::dot(e1, e2), geom::dot(e2, e2));
    let det = g11 * g22 - g12 * g12;
    if !(det > 0.0) {
        return None;
    }
    // Inverse Gram matrix.
    let (q11, q12, q22) = (g22 / det, -g12 / det, g11 / det);
    let qa = q11 + 2.0 * q12 + q22;
    let qb = (q11 + q12) * ta + (q12 + q22) * tb;
    let qc = q11 * ta * ta + 2.0 * q12 * ta * tb + q22 * tb * tb;
    let disc = qb * qb - qa * (qc - 1.0);
    if disc < 0.0 {
        return None;
    }
    let t = (qb + disc.sqrt()) / qa;
    let (da, db) = (ta - t, tb - t);
    // Coefficients of the gradient in the edge basis must both be ≤ 0.
    let l1 = q11 * da + q12 * db;
    let l2 = q12 * da + q22 * db;
    if l1 <= 0.0 && l2 <= 0.0 && t >= ta.max(tb) {
        Some(t)
    } else {
        None
    }
}

/// Result of [`optimize_levelset`].
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetOutcome {
    /// Best iterate by cost.
    pub field: LevelSetField,
    pub cost: f64,
    pub mu: f64,
    pub area: f64,
    pub eigenvalues: Vec<f64>,
    pub trace: OptTrace,
}

impl LevelSetOutcome {
    /// `μ_k` of the best iterate.
    pub fn mu_k(&self, k: usize) -> f64 {
        self.eigenvalues[k]
    }
}

struct Best {
    field: LevelSetField,
    eval: CostVelocity,
}

/// Maximizes `J` by level-set advection; see the module documentation.
///
/// Each restart runs `n_steps` steps of length `γ/‖v‖_∞`, then an adaptive
/// phase that grows the step by 1.1 after an improvement of `J` and halves
/// it (discarding the step) after a regression, stopping below `min_step`.
/// The iterate with the largest `J` over all restarts is returned. An
/// eigensolver failure ends its restart and is recorded in the trace.
pub fn optimize_levelset(mesh: &SurfaceMesh, config: &LevelSetConfig) -> Result<(LevelSetField, OptTrace)> {
    let outcome = optimize_levelset_detailed(mesh, config)?;
    Ok((outcome.field, outcome.trace))
}

/// Like [`optimize_levelset`], also returning the best cost and spectrum.
pub fn optimize_levelset_detailed(mesh: &SurfaceMesh, config: &LevelSetConfig) -> Result<LevelSetOutcome> {
    config.validate(mesh)?;
    let mut model = LevelSetModel::new(mesh, config.eigen.clone());
    let smoother = if config.alpha > 0.0 {
        Some(VelocitySmoother::new(model.assembler(), config.alpha)?)
    } else {
        None
    };
    let mut trace = OptTrace::default();
    let mut best: Option<(usize, Best)> = None;
    let mut last_error = None;
    for restart in 0..config.restarts {
        let phi = match (&config.initial_phi, restart) {
            (Some(p), 0) => p.clone(),
            _ => {
                let (p, q) = config.trig_degrees;
                init_random_levelset(mesh, p, q, restart_seed(config.seed, restart))
            }
        };
        let ls = LevelSetField::new(phi, config.sigma_s, config.redistance_period)?;
        model.warm = None;
        let mut run = Run {
            mesh,
            config,
            model: &mut model,
            smoother: smoother.as_ref(),
            trace: &mut trace,
            restart,
            iteration: 0,
            best: None,
        };
        let outcome = run.execute(ls);
        let run_best = run.best.take();
        if let Err(e) = outcome {
            trace.failure = Some(TraceFailure {
                restart,
                iteration: trace.records.iter().filter(|r| r.restart == restart).count(),
                message: format!("{e}"),
            });
            last_error = Some(e);
        }
        if let Some(b) = run_best {
            if best.as_ref().is_none_or(|(_, cur)| b.eval.cost > cur.eval.cost) {
                best = Some((restart, b));
            }
        }
    }
    match best {
        Some((restart, b)) => {
            trace.best_restart = restart;
            Ok(LevelSetOutcome {
                field: b.field,
                cost: b.eval.cost,
                mu: b.eval.mu,
                area: b.eval.area,
                eigenvalues: b.eval.eigenvalues,
                trace,
            })
        }
        None => Err(last_error.unwrap_or(Error::Numerical("no level-set iterate was evaluated"))),
    }
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(restart as u64)
}

struct Run<'r, 'a> {
    mesh: &'a SurfaceMesh,
    config: &'r LevelSetConfig,
    model: &'r mut LevelSetModel<'a>,
    smoother: Option<&'r VelocitySmoother>,
    trace: &'r mut OptTrace,
    restart: usize,
    iteration: usize,
    best: Option<Best>,
}

impl Run<'_, '_> {
    fn record(&mut self, stage: usize, eval: &CostVelocity, step: f64, accepted: bool) {
        let k = self.config.k;
        self.trace.push(TraceRecord {
            restart: self.restart,
            stage,
            epsilon: self.config.epsilon,
            iteration: self.iteration,
            objective: eval.cost,
            eigenvalues: eval.eigenvalues[k..k + eval.cluster_size].to_vec(),
            mass: eval.area,
            step,
            cluster_size: eval.cluster_size,
            accepted,
        });
    }

    fn keep_if_best(&mut self, ls: &LevelSetField, eval: &CostVelocity) {
        if self.best.as_ref().is_none_or(|b| eval.cost > b.eval.cost) {
            self.best = Some(Best {
                field: ls.clone(),
                eval: eval.clone(),
            });
        }
    }

    fn direction(&self, eval: &CostVelocity) -> Result<Vec<f64>> {
        match self.smoother {
            Some(s) => s.apply(&eval.velocity),
            None => Ok(eval.velocity.clone()),
        }
    }

    fn maybe_redistance(&self, ls: LevelSetField, step: usize) -> Result<LevelSetField> {
        if step.is_multiple_of(ls.redistance_period) {
            Ok(redistance(self.mesh, &ls)?.field)
        } else {
            Ok(ls)
        }
    }

    fn execute(&mut self, mut ls: LevelSetField) -> Result<()> {
        let config = self.config;
        let mut step = 0.0;
        for i in 0..config.n_steps {
            ls = self.maybe_redistance(ls, i)?;
            let eval = self.model.evaluate(&ls, config)?;
            self.record(0, &eval, step, true);
            self.keep_if_best(&ls, &eval);
            let v = self.direction(&eval)?;
            let vmax = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if !(vmax > 0.0) {
                return Ok(());
            }
            step = config.gamma / vmax;
            ls = advect(self.mesh, &ls, &v, step)?;
            self.iteration += 1;
        }

        let mut eval = self.model.evaluate(&ls, config)?;
        self.record(1, &eval, step, true);
        self.keep_if_best(&ls, &eval);
        let mut since_reset = 0;
        for _ in 0..config.adaptive_steps {
            if step < config.min_step {
                break;
            }
            let v = self.direction(&eval)?;
            let trial_ls = advect(self.mesh, &ls, &v, step)?;
            self.iteration += 1;
            let trial = self.model.evaluate(&trial_ls, config)?;
            if trial.cost >= eval.cost {
                self.record(1, &trial, step, true);
                self.keep_if_best(&trial_ls, &trial);
                ls = trial_ls;
                eval = trial;
                step *= 1.1;
                since_reset += 1;
                if since_reset >= ls.redistance_period {
                    since_reset = 0;
                    ls = self.maybe_redistance(ls, 0)?;
                    eval = self.model.evaluate(&ls, config)?;
                }
            } else {
                self.record(1, &trial, step, false);
                step *= 0.5;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{cap_area_from_radius, make_icosphere};

    fn cap_cone(mesh: &SurfaceMesh, theta0: f64) -> LevelSetField {
        let phi = (0..mesh.n_vertices()).map(|i| mesh.parameters(i).0 - theta0).collect();
        LevelSetField::new(phi, 1e-5, 20).unwrap()
    }

    #[test]
    fn indicator_examples() {
        let ls = LevelSetField::new(vec![0.0, 1e-5, -10.0], 1e-5, 20).unwrap();
        let rho = smoothed_indicator(&ls);
        assert_eq!(rho.values()[0], 0.5);
        assert!((rho.values()[1] - 0.5 * (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
        assert!((rho.values()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_fraction_cases() {
        assert_eq!(negative_fraction([1.0, 2.0, 3.0]), 0.0);
        assert_eq!(negative_fraction([-1.0, -2.0, -3.0]), 1.0);
        assert!((negative_fraction([-1.0, 1.0, 1.0]) - 0.25).abs() < 1e-15);
        assert!((negative_fraction([1.0, -1.0, -1.0]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn triangle_update_recovers_planar_front() {
        // Front x = 0 moving in +x; values are x-coordinates.
        let a = [1.0, 0.0, 0.0];
        let b = [1.0, 1.0, 0.0];
        let c = [2.0, 0.5, 0.0];
        assert!((triangle_update(c, a, b, 1.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn redistance_without_interface_is_flagged() {
        let mesh = make_icosphere(1).unwrap();
        let ls = LevelSetField::new(vec![1.0; mesh.n_vertices()], 1e-5, 20).unwrap();
        let r = redistance(&mesh, &ls).unwrap();
        assert!(!r.has_interface);
        assert_eq!(r.field, ls);
    }

    #[test]
    fn advect_zero_velocity_is_identity() {
        let mesh = make_icosphere(2).unwrap();
        let ls = cap_cone(&mesh, 1.0);
        let out = advect(&mesh, &ls, &vec![0.0; mesh.n_vertices()], 0.3).unwrap();
        assert_eq!(out, ls);
    }

    #[test]
    fn cap_area_matches_formula() {
        let mesh = make_icosphere(5).unwrap();
        let ls = cap_cone(&mesh, 1.0);
        let a = domain_area(&mesh, &ls.phi);
        assert!((a / cap_area_from_radius(1.0) - 1.0).abs() < 2e-3, "{a}");
    }
}
