//! Maximization of `μ_k(ρ)` over densities with `0 ≤ ρ ≤ 1` and `ρ·g = m`.
//!
//! Nearly multiple eigenvalues are handled by the smoothed minimum
//! `F = (Σ μ_i^{-p})^{-1/p}` over the cluster `μ_k, …, μ_{k+c−1}` of values
//! within `σ_c` of `μ_k`. The ascent is a projected gradient method with
//! backtracking; see [`projected_ascent`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eig::{EigenOptions, EigenResult, PencilSolver};
use crate::error::{Error, Result};
use crate::fem::{Assembler, SparseSymSystem};
use crate::mesh::{DensityField, SurfaceMesh};
use crate::trace::{OptTrace, TraceFailure, TraceRecord};

/// Number of eigenvalues beyond `μ_k` computed for cluster detection.
pub const CLUSTER_WINDOW: usize = 5;

/// Largest `c` such that `eigs[k + c − 1] − eigs[k] ≤ sigma_c`, limited to
/// the available window.
///
/// # Panics
/// If `eigs` has no entry at index `k`.
pub fn cluster_size(eigs: &[f64], k: usize, sigma_c: f64) -> usize {
    assert!(k < eigs.len(), "cluster_size needs at least k + 1 eigenvalues");
    eigs[k..].iter().take_while(|&&v| v - eigs[k] <= sigma_c).count().max(1)
}

/// `(Σ vᵢ^{-p})^{-1/p}`, evaluated relative to the smallest value so that
/// no power overflows. A single value is returned unchanged.
pub fn smoothed_min(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Size("smoothed_min of an empty set"));
    }
    if let Some(&bad) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::domain("smoothed_min needs positive finite values", bad));
    }
    if values.len() == 1 {
        return Ok(values[0]);
    }
    let low = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let sum: f64 = values.iter().map(|v| (low / v).powf(p)).sum();
    Ok(low * sum.powf(-1.0 / p))
}

/// Chain rule for [`smoothed_min`]: `Σᵢ (F/vᵢ)^{p+1} ∇vᵢ`.
pub fn smoothed_min_gradient(values: &[f64], gradients: &[Vec<f64>], p: f64) -> Result<Vec<f64>> {
    if gradients.len() != values.len() {
        return Err(Error::structural(
            "one gradient per value",
            values.len(),
            gradients.len(),
        ));
    }
    let f = smoothed_min(values, p)?;
    let n = gradients[0].len();
    if let Some(bad) = gradients.iter().find(|g| g.len() != n) {
        return Err(Error::structural("gradient length", n, bad.len()));
    }
    let mut out = vec![0.0; n];
    for (v, g) in values.iter().zip(gradients) {
        let w = if values.len() == 1 { 1.0 } else { (f / v).powf(p + 1.0) };
        for (o, gi) in out.iter_mut().zip(g) {
            *o += w * gi;
        }
    }
    Ok(out)
}

/// Euclidean projection of `raw` onto `{0 ≤ ρ ≤ 1, ρ·g = m, ρ = 0 on mask}`.
///
/// The projection is `clip(raw + λg)` on unmasked entries. The mass is
/// piecewise linear and nondecreasing in `λ`; the root is found exactly by
/// walking the sorted breakpoints.
pub fn project_feasible(raw: &[f64], g: &[f64], m: f64, mask: Option<&[bool]>) -> Result<DensityField> {
    let n = raw.len();
    if g.len() != n {
        return Err(Error::structural("mass vector length", n, g.len()));
    }
    if let Some(mk) = mask {
        if mk.len() != n {
            return Err(Error::structural("mask length", n, mk.len()));
        }
    }
    if let Some(&bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::domain("raw density must be finite", bad));
    }
    let free = |i: usize| mask.is_none_or(|mk| !mk[i]) && g[i] > 0.0;
    let reachable: f64 = (0..n).filter(|&i| free(i)).map(|i| g[i]).sum();
    if !(m > 0.0) || m > reachable * (1.0 + 1e-12) {
        return Err(Error::Feasibility { target: m, reachable });
    }
    let mut out = vec![0.0; n];
    if m >= reachable {
        for (i, o) in out.iter_mut().enumerate() {
            if free(i) {
                *o = 1.0;
            }
        }
        return Ok(DensityField::clipped(out));
    }

    // Breakpoints: entry i leaves 0 at λ = −raw/g and reaches 1 at (1 − raw)/g.
    let mut events: Vec<(f64, usize, bool)> = Vec::with_capacity(2 * n);
    for i in (0..n).filter(|&i| free(i)) {
        events.push((-raw[i] / g[i], i, false));
        events.push(((1.0 - raw[i]) / g[i], i, true));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));

    // On a segment the mass is `upper + Σ_active (raw_i g_i) + λ Σ_active g_i²`.
    let mut upper = 0.0;
    let mut lin = 0.0;
    let mut quad = 0.0;
    let mut lambda = events.last().map_or(0.0, |e| e.0);
    for w in 0..events.len() {
        let (at, i, leaving) = events[w];
        if leaving {
            upper += g[i];
            lin -= raw[i] * g[i];
            quad -= g[i] * g[i];
        } else {
            lin += raw[i] * g[i];
            quad += g[i] * g[i];
        }
        let Some(&(next, _, _)) = events.get(w + 1) else {
            break;
        };
        if upper + lin + quad.max(0.0) * next >= m {
            lambda = if quad > 0.0 {
                ((m - upper - lin) / quad).clamp(at, next)
            } else {
                at
            };
            break;
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        if free(i) {
            *o = (raw[i] + lambda * g[i]).clamp(0.0, 1.0);
        }
    }
    Ok(DensityField::clipped(out))
}

/// How the cluster threshold `σ_c` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClusterGap {
    /// `σ_c = factor · μ_k` at the current iterate.
    Relative(f64),
    Absolute(f64),
}

impl ClusterGap {
    pub fn threshold(self, mu_k: f64) -> f64 {
        match self {
            ClusterGap::Relative(f) => f * mu_k.abs(),
            ClusterGap::Absolute(a) => a,
        }
    }
}

/// Step control of the projected gradient ascent. Steps are measured in
/// density units: a step `s` moves the largest gradient entry by `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepControl {
    pub initial: f64,
    pub max: f64,
    /// The restart stops once backtracking drives the step below this.
    pub min: f64,
    /// Factor applied after an accepted step.
    pub growth: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            initial: 0.05,
            max: 0.5,
            min: 1e-4,
            growth: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityOptConfig {
    /// Eigenvalue index, `k ≥ 1`.
    pub k: usize,
    pub target_mass: f64,
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
    /// Vertices forced to `ρ = 0`.
    pub exclusion_mask: Option<Vec<bool>>,
    pub step: StepControl,
    /// Replaces the random start of restart 0 when given.
    pub initial_density: Option<Vec<f64>>,
    pub eigen: EigenOptions,
}

impl DensityOptConfig {
    pub fn new(k: usize, target_mass: f64) -> Self {
        Self {
            k,
            target_mass,
            epsilon: 1e-4,
            p: 20.0,
            cluster_gap: ClusterGap::Relative(0.05),
            continuation: default_continuation(1e-4),
            max_iters: 300,
            polish: true,
            restarts: 4,
            seed: 1,
            exclusion_mask: None,
            step: StepControl::default(),
            initial_density: None,
            eigen: EigenOptions::default(),
        }
    }

    /// Checks the settings against a mesh with `n` vertices and total `area`.
    pub fn validate(&self, n: usize, area: f64) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Size("eigenvalue index k must be at least 1"));
        }
        if !(self.target_mass > 0.0 && self.target_mass < area) {
            return Err(Error::domain("target mass must lie in (0, area)", self.target_mass));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::domain("epsilon must be positive", self.epsilon));
        }
        if !(self.p >= 2.0) {
            return Err(Error::domain("smoothing exponent p must be at least 2", self.p));
        }
        if self.restarts == 0 {
            return Err(Error::Size("at least one restart is needed"));
        }
        if !(self.step.min > 0.0 && self.step.initial >= self.step.min && self.step.max >= self.step.initial) {
            return Err(Error::domain(
                "step control needs 0 < min ≤ initial ≤ max",
                self.step.initial,
            ));
        }
        if !(self.step.growth >= 1.0) {
            return Err(Error::domain("step growth must be at least 1", self.step.growth));
        }
        if let Some(mask) = &self.exclusion_mask {
            if mask.len() != n {
                return Err(Error::structural("exclusion mask length", n, mask.len()));
            }
        }
        if let Some(init) = &self.initial_density {
            if init.len() != n {
                return Err(Error::structural("initial density length", n, init.len()));
            }
        }
        check_continuation(&self.continuation, self.epsilon)
    }

    pub(crate) fn ascent_settings(&self) -> AscentSettings {
        let mut schedule = self.continuation.clone();
        schedule.push(self.epsilon);
        AscentSettings {
            k: self.k,
            target_mass: self.target_mass,
            p: self.p,
            cluster_gap: self.cluster_gap,
            schedule,
            max_iters: self.max_iters,
            polish: self.polish,
            restarts: self.restarts,
            seed: self.seed,
            step: self.step.clone(),
        }
    }
}

/// Continuation values must decrease strictly and stay above `epsilon`.
pub(crate) fn check_continuation(continuation: &[f64], epsilon: f64) -> Result<()> {
    let mut prev = f64::INFINITY;
    for &e in continuation {
        if !(e > epsilon && e < prev) {
            return Err(Error::domain("continuation must decrease strictly towards epsilon", e));
        }
        prev = e;
    }
    Ok(())
}

/// A discretized eigenvalue problem parametrized by a density vector.
pub trait SpectralModel {
    /// Constraint vector `g` of `ρ·g = m`.
    fn mass_vector(&self) -> &[f64];

    /// Nodes sharing an element with each node.
    fn neighbors(&self) -> &[Vec<usize>];

    /// Changes the regularization for subsequent solves.
    fn set_epsilon(&mut self, epsilon: f64) -> Result<()>;

    /// Ascending eigenvalues at `rho`, at least `count` of them. Index 0 is
    /// the constant mode.
    fn eigenvalues(&mut self, rho: &[f64], count: usize) -> Result<Vec<f64>>;

    /// Gradient of eigenvalue `index` at the density of the last
    /// [`SpectralModel::eigenvalues`] call.
    fn gradient(&mut self, index: usize) -> Result<Vec<f64>>;
}

/// [`SpectralModel`] of the ε-regularized pencil on a surface mesh.
pub struct SurfaceModel<'a> {
    assembler: Assembler<'a>,
    solver: PencilSolver,
    epsilon: f64,
    neighbors: Vec<Vec<usize>>,
    last: Option<(SparseSymSystem, EigenResult)>,
}

impl<'a> SurfaceModel<'a> {
    pub fn new(mesh: &'a SurfaceMesh, epsilon: f64, options: EigenOptions) -> Self {
        let assembler = Assembler::new(mesh);
        let solver = PencilSolver::new(options).with_ordering(assembler.ordering().to_vec());
        Self {
            assembler,
            solver,
            epsilon,
            neighbors: mesh.vertex_neighbors(),
            last: None,
        }
    }

    /// Eigenpairs of the last solve.
    pub fn last_result(&self) -> Option<&EigenResult> {
        self.last.as_ref().map(|(_, r)| r)
    }
}

impl SpectralModel for SurfaceModel<'_> {
    fn mass_vector(&self) -> &[f64] {
        self.assembler.mass_vector()
    }

    fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    fn set_epsilon(&mut self, epsilon: f64) -> Result<()> {
        if !(epsilon > 0.0) {
            return Err(Error::domain("epsilon must be positive", epsilon));
        }
        self.epsilon = epsilon;
        Ok(())
    }

    fn eigenvalues(&mut self, rho: &[f64], count: usize) -> Result<Vec<f64>> {
        let field = DensityField::new(rho.to_vec())?;
        let system = self.assembler.assemble(&field, self.epsilon)?;
        let warm = self.last.as_ref().map(|(_, r)| r.eigenvectors.clone());
        let result = self
            .solver
            .solve(&system.stiffness, &system.mass, count, warm.as_deref())?;
        let values = result.eigenvalues.clone();
        self.last = Some((system, result));
        Ok(values)
    }

    fn gradient(&mut self, index: usize) -> Result<Vec<f64>> {
        let (system, result) = self
            .last
            .as_ref()
            .ok_or(Error::Numerical("gradient requested before a solve"))?;
        let u = result
            .eigenvectors
            .get(index)
            .ok_or(Error::Size("gradient index beyond computed eigenpairs"))?;
        self.assembler.eigenvalue_gradient(system, result.eigenvalues[index], u)
    }
}

/// Decreasing ε values `10^{-1}, 10^{-1.5}, …` above `epsilon`, used as
/// continuation stages before the target regularization.
pub fn default_continuation(epsilon: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut e = 0.1;
    while e > epsilon * 1.5 {
        out.push(e);
        e /= 10f64.sqrt();
    }
    out
}

/// Settings of [`projected_ascent`] that do not depend on the discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct AscentSettings {
    pub k: usize,
    pub target_mass: f64,
    pub p: f64,
    pub cluster_gap: ClusterGap,
    /// Regularization of each stage; the last entry is the target.
    pub schedule: Vec<f64>,
    /// Iteration budget of each stage.
    pub max_iters: usize,
    /// Adds a final stage started from the rounded iterate.
    pub polish: bool,
    pub restarts: usize,
    pub seed: u64,
    pub step: StepControl,
}

/// Result of one multi-start ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct AscentOutcome {
    pub density: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub trace: OptTrace,
}

impl AscentOutcome {
    /// Final `μ_k` of the returned density.
    pub fn mu_k(&self, k: usize) -> f64 {
        self.eigenvalues[k]
    }
}

/// Seeded generator of restart `restart`.
pub(crate) fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Uniform i.i.d. random density projected onto the feasible set.
pub(crate) fn random_start(g: &[f64], m: f64, mask: Option<&[bool]>, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let raw: Vec<f64> = (0..g.len()).map(|_| rng.random::<f64>()).collect();
    Ok(project_feasible(&raw, g, m, mask)?.into_values())
}

/// Indicator of mass `m` filled in order of decreasing `rho` (ties by
/// index), with one fractional entry. Masked entries stay zero.
pub fn round_density(rho: &[f64], g: &[f64], m: f64, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (0..rho.len()).filter(|&i| mask.is_none_or(|mk| !mk[i])).collect();
    order.sort_by(|&a, &b| rho[b].total_cmp(&rho[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; rho.len()];
    let mut left = m;
    for i in order {
        if left <= 0.0 {
            break;
        }
        let take = (left / g[i]).min(1.0);
        out[i] = take;
        left -= take * g[i];
    }
    Ok(project_feasible(&out, g, m, mask)?.into_values())
}

/// Gradient per unit mass projected onto the tangent cone of the feasible
/// set in the mass-weighted inner product: entries pinned at a bound are
/// zeroed and the weighted mean over the rest is removed, repeating until
/// the pinned set settles. Masked entries are zero.
fn ascent_direction(grad: &[f64], g: &[f64], rho: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let n = g.len();
    let scaled: Vec<f64> = (0..n).map(|i| grad[i] / g[i]).collect();
    let mut active: Vec<bool> = (0..n).map(|i| mask.is_none_or(|m| !m[i])).collect();
    let mut mean = 0.0;
    for _ in 0..n + 1 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in (0..n).filter(|&i| active[i]) {
            num += grad[i];
            den += g[i];
        }
        mean = if den > 0.0 { num / den } else { 0.0 };
        let mut changed = false;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            let d = scaled[i] - mean;
            if (rho[i] <= BOUND_TOL && d < 0.0) || (rho[i] >= 1.0 - BOUND_TOL && d > 0.0) {
                active[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).map(|i| if active[i] { scaled[i] - mean } else { 0.0 }).collect()
}

const BOUND_TOL: f64 = 1e-12;

struct Point {
    rho: Vec<f64>,
    eigs: Vec<f64>,
}

/// Shared state of the stages of one restart.
struct Run<'s, 't> {
    settings: &'s AscentSettings,
    g: &'s [f64],
    mask: Option<&'s [bool]>,
    count: usize,
    restart: usize,
    trace: &'t mut OptTrace,
    iteration: usize,
}

/// Multi-start projected gradient ascent of the smoothed cluster minimum.
///
/// Each iteration detects the cluster `μ_k..μ_{k+c−1}` at the current
/// density, moves along the mass-weighted projected gradient of its
/// smoothed minimum, projects, and halves the step until that same smoothed
/// minimum does not decrease. A restart runs one such stage per entry of
/// the ε schedule, each warm-started from the previous one. With
/// `polish`, one more stage at the final ε starts from the rounded iterate
/// and lets no entry rise above the largest value among itself and its
/// neighbors; the better of the two endpoints is kept.
///
/// `initial(restart, rng)` returns the starting density of each restart
/// (already feasible); the restart with the largest final `μ_k` is
/// returned.
pub fn projected_ascent<M: SpectralModel>(
    model: &mut M,
    settings: &AscentSettings,
    mask: Option<&[bool]>,
    mut initial: impl FnMut(usize, &mut ChaCha8Rng) -> Result<Vec<f64>>,
) -> Result<AscentOutcome> {
    if settings.schedule.is_empty() {
        return Err(Error::Size("the ε schedule needs at least one stage"));
    }
    let k = settings.k;
    let g = model.mass_vector().to_vec();
    let mut trace = OptTrace::default();
    let mut best: Option<(usize, Point)> = None;
    let mut last_error = None;

    for restart in 0..settings.restarts {
        let mut rng = restart_rng(settings.seed, restart);
        let mut run = Run {
            settings,
            g: &g,
            mask,
            count: k + CLUSTER_WINDOW,
            restart,
            trace: &mut trace,
            iteration: 0,
        };
        match run.execute(model, &mut rng, &mut initial) {
            Ok(point) => {
                let better = best.as_ref().is_none_or(|(_, b)| point.eigs[k] > b.eigs[k]);
                if better {
                    best = Some((restart, point));
                }
            }
            Err(e) => {
                if let Error::Optimization { restart, iteration, .. } = &e {
                    trace.failure = Some(TraceFailure {
                        restart: *restart,
                        iteration: *iteration,
                        message: format!("{e}"),
                    });
                }
                last_error = Some(e);
            }
        }
    }
    match best {
        Some((restart, point)) => {
            trace.best_restart = restart;
            Ok(AscentOutcome {
                density: point.rho,
                eigenvalues: point.eigs,
                trace,
            })
        }
        None => Err(last_error.unwrap_or(Error::Numerical("no restart completed"))),
    }
}

impl Run<'_, '_> {
    fn fail(&self) -> impl Fn(Error) -> Error {
        let (restart, iteration) = (self.restart, self.iteration);
        move |e| e.in_optimization(restart, iteration)
    }

    fn execute<M: SpectralModel>(
        &mut self,
        model: &mut M,
        rng: &mut ChaCha8Rng,
        initial: &mut impl FnMut(usize, &mut ChaCha8Rng) -> Result<Vec<f64>>,
    ) -> Result<Point> {
        let k = self.settings.k;
        let schedule = self.settings.schedule.clone();
        let mut rho = initial(self.restart, rng).map_err(self.fail())?;
        for (stage, &eps) in schedule.iter().enumerate() {
            rho = self.stage(model, stage, eps, rho, None)?.rho;
        }
        let target = *schedule.last().expect("nonempty schedule");
        let main = self.evaluate(model, &rho)?;
        if !self.settings.polish {
            return Ok(main);
        }
        let rounded = round_density(&main.rho, self.g, self.settings.target_mass, self.mask).map_err(self.fail())?;
        let neighbors = model.neighbors().to_vec();
        let polished = self.stage(model, schedule.len(), target, rounded, Some(&neighbors))?;
        if polished.eigs[k] > main.eigs[k] {
            Ok(polished)
        } else {
            // Leave the model at the returned density.
            self.evaluate(model, &main.rho)
        }
    }

    fn evaluate<M: SpectralModel>(&self, model: &mut M, rho: &[f64]) -> Result<Point> {
        let eigs = model.eigenvalues(rho, self.count).map_err(self.fail())?;
        Ok(Point {
            rho: rho.to_vec(),
            eigs,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        stage: usize,
        eps: f64,
        point: &Point,
        objective: f64,
        step: f64,
        cluster: usize,
        accepted: bool,
    ) {
        let k = self.settings.k;
        self.trace.push(TraceRecord {
            restart: self.restart,
            stage,
            epsilon: eps,
            iteration: self.iteration,
            objective,
            eigenvalues: point.eigs[k..k + cluster].to_vec(),
            mass: point.rho.iter().zip(self.g).map(|(a, b)| a * b).sum(),
            step,
            cluster_size: cluster,
            accepted,
        });
    }

    fn stage<M: SpectralModel>(
        &mut self,
        model: &mut M,
        stage: usize,
        eps: f64,
        rho: Vec<f64>,
        limit: Option<&[Vec<usize>]>,
    ) -> Result<Point> {
        let settings = self.settings;
        let (k, p) = (settings.k, settings.p);
        model.set_epsilon(eps).map_err(self.fail())?;
        let mut current = self.evaluate(model, &rho)?;
        let cluster_of = |eigs: &[f64]| cluster_size(eigs, k, settings.cluster_gap.threshold(eigs[k]));
        let objective = |eigs: &[f64], cluster: usize| smoothed_min(&eigs[k..k + cluster], p);
        let c0 = cluster_of(&current.eigs);
        let f0 = objective(&current.eigs, c0).map_err(self.fail())?;
        self.record(stage, eps, &current, f0, 0.0, c0, true);

        let mut step = settings.step.initial;
        for _ in 0..settings.max_iters {
            self.iteration += 1;
            let cluster = cluster_of(&current.eigs);
            let f_current = objective(&current.eigs, cluster).map_err(self.fail())?;
            // The model's cached state belongs to the current point here.
            let grads = (k..k + cluster)
                .map(|i| model.gradient(i))
                .collect::<Result<Vec<_>>>()
                .map_err(self.fail())?;
            let grad = smoothed_min_gradient(&current.eigs[k..k + cluster], &grads, p).map_err(self.fail())?;
            let dir = ascent_direction(&grad, self.g, &current.rho, self.mask);
            let dmax = dir.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !(dmax > 0.0) || !dmax.is_finite() {
                break;
            }
            let ceiling: Option<Vec<f64>> = limit.map(|nb| {
                (0..current.rho.len())
                    .map(|i| nb[i].iter().fold(current.rho[i], |a, &j| a.max(current.rho[j])))
                    .collect()
            });

            let mut accepted = None;
            while step >= settings.step.min {
                let raw: Vec<f64> = (0..dir.len())
                    .map(|i| {
                        let v = current.rho[i] + step * dir[i] / dmax;
                        ceiling.as_ref().map_or(v, |c| v.min(c[i]))
                    })
                    .collect();
                let trial_rho = project_feasible(&raw, self.g, settings.target_mass, self.mask)
                    .map_err(self.fail())?
                    .into_values();
                let moved = trial_rho
                    .iter()
                    .zip(&current.rho)
                    .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                if moved <= 1e-12 {
                    break;
                }
                let trial = self.evaluate(model, &trial_rho)?;
                let f_trial = objective(&trial.eigs, cluster).map_err(self.fail())?;
                if f_trial >= f_current {
                    accepted = Some((trial, f_trial));
                    break;
                }
                self.record(stage, eps, &trial, f_trial, step, cluster, false);
                step *= 0.5;
            }
            match accepted {
                Some((trial, f_trial)) => {
                    self.record(stage, eps, &trial, f_trial, step, cluster, true);
                    current = trial;
                    step = (step * settings.step.growth).min(settings.step.max);
                }
                None => {
                    // Restore the model state to the current point before stopping.
                    model.eigenvalues(&current.rho, self.count).map_err(self.fail())?;
                    break;
                }
            }
        }
        Ok(current)
    }
}

/// Maximizes `μ_k` of the ε-regularized problem on `mesh` under the mass
/// constraint of `config`.
pub fn optimize_density(mesh: &SurfaceMesh, config: &DensityOptConfig) -> Result<(DensityField, OptTrace)> {
    let (density, trace, _) = optimize_density_detailed(mesh, config)?;
    Ok((density, trace))
}

/// Like [`optimize_density`], also returning the final eigenvalues.
pub fn optimize_density_detailed(
    mesh: &SurfaceMesh,
    config: &DensityOptConfig,
) -> Result<(DensityField, OptTrace, Vec<f64>)> {
    config.validate(mesh.n_vertices(), mesh.total_area())?;
    let mut model = SurfaceModel::new(mesh, config.epsilon, config.eigen.clone());
    let settings = config.ascent_settings();
    let mask = config.exclusion_mask.as_deref();
    let g = model.mass_vector().to_vec();
    let m = config.target_mass;
    let warm = config.initial_density.clone();
    let outcome = projected_ascent(&mut model, &settings, mask, |restart, rng| match (&warm, restart) {
        (Some(init), 0) => Ok(project_feasible(init, &g, m, mask)?.into_values()),
        _ => random_start(&g, m, mask, rng),
    })?;
    Ok((
        DensityField::clipped(outcome.density),
        outcome.trace,
        outcome.eigenvalues,
    ))
}
