use std::f64::consts::PI;

use neumann_core::axisym::{
    axisym_mu1, cap_reference_mu1, optimize_density_1d_detailed, AxisymOptConfig, LatitudeDensity,
};
use neumann_core::density::{
    cluster_size, optimize_density_detailed, project_feasible, smoothed_min, smoothed_min_gradient, DensityOptConfig,
};
use neumann_core::eig::{solve_pencil, EigenOptions};
use neumann_core::fem::Assembler;
use neumann_core::mesh::{geodesic_cap_field, make_icosphere};
use neumann_core::trace::OptTrace;
use neumann_core::DensityField;
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>, f64)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-2.0f64..3.0, n),
            prop::collection::vec(0.01f64..2.0, n),
            prop::collection::vec(prop::bool::weighted(0.2), n),
            0.01f64..0.99,
        )
    })
}

proptest! {
    #[test]
    fn projection_is_feasible_and_idempotent((raw, g, mask, frac) in instance()) {
        let free: f64 = g.iter().zip(&mask).filter(|(_, &m)| !m).map(|(w, _)| w).sum();
        prop_assume!(free > 0.0);
        let m = frac * free;
        let rho = project_feasible(&raw, &g, m, Some(&mask)).unwrap();
        let v = rho.values();
        let mass: f64 = v.iter().zip(&g).map(|(a, b)| a * b).sum();
        prop_assert!((mass - m).abs() <= 1e-8 * m);
        prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!(v.iter().zip(&mask).all(|(x, &masked)| !masked || *x == 0.0));
        let again = project_feasible(v, &g, m, Some(&mask)).unwrap();
        for (a, b) in again.values().iter().zip(v) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn smoothed_min_is_bracketed(values in prop::collection::vec(0.1f64..50.0, 1..8), p in 2.0f64..60.0) {
        let f = smoothed_min(&values, p).unwrap();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let n = values.len() as f64;
        prop_assert!(f <= min * (1.0 + 1e-12));
        prop_assert!(f >= min * n.powf(-1.0 / p) * (1.0 - 1e-12));
    }

    #[test]
    fn smoothed_min_gradient_matches_differences(values in prop::collection::vec(0.5f64..10.0, 1..6), p in 2.0f64..40.0) {
        let n = values.len();
        let unit: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let grad = smoothed_min_gradient(&values, &unit, p).unwrap();
        let h = 1e-6;
        for i in 0..n {
            let mut up = values.clone();
            let mut down = values.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (smoothed_min(&up, p).unwrap() - smoothed_min(&down, p).unwrap()) / (2.0 * h);
            prop_assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + grad[i].abs()));
        }
    }

    #[test]
    fn cluster_size_stays_in_window(mut eigs in prop::collection::vec(0.0f64..20.0, 2..12), k in 1usize..4, gap in 0.0f64..5.0) {
        eigs.sort_by(f64::total_cmp);
        prop_assume!(k < eigs.len());
        let c = cluster_size(&eigs, k, gap);
        prop_assert!(c >= 1);
        prop_assert!(c <= eigs.len() - k);
        prop_assert!(cluster_size(&eigs, k, gap * 2.0 + 1.0) >= c);
        prop_assert_eq!(cluster_size(&eigs, k, f64::INFINITY), eigs.len() - k);
    }
}

/// Mass constraint of every accepted iterate, and ascent of the objective
/// between consecutive accepted iterates of a stage with the same cluster.
fn check_trace(trace: &OptTrace, m: f64) {
    assert!(trace.accepted().count() > 0);
    for r in trace.accepted() {
        assert!((r.mass - m).abs() <= 1e-8 * m, "mass {} vs {m}", r.mass);
        assert_eq!(r.eigenvalues.len(), r.cluster_size);
    }
    let records: Vec<_> = trace.accepted().collect();
    for w in records.windows(2) {
        if (w[0].restart, w[0].stage, w[0].cluster_size) == (w[1].restart, w[1].stage, w[1].cluster_size) {
            assert!(
                w[1].objective >= w[0].objective,
                "{} then {}",
                w[0].objective,
                w[1].objective
            );
            assert!(w[1].iteration > w[0].iteration);
        }
    }
}

fn constant_mu1(mesh: &neumann_core::SurfaceMesh, m: f64, eps: f64) -> f64 {
    let rho = DensityField::constant(mesh.n_vertices(), m / mesh.total_area()).unwrap();
    let system = Assembler::new(mesh).assemble(&rho, eps).unwrap();
    solve_pencil(&system.stiffness, &system.mass, 2, EigenOptions::default())
        .unwrap()
        .eigenvalues[1]
}

#[test]
fn surface_run_respects_constraints_and_beats_constant_density() {
    let mesh = make_icosphere(2).unwrap();
    for m in [2.0, 7.0] {
        let mut config = DensityOptConfig::new(1, m);
        config.max_iters = 25;
        config.restarts = 2;
        let (rho, trace, eigs) = optimize_density_detailed(&mesh, &config).unwrap();
        check_trace(&trace, m);
        assert!(rho.values().iter().all(|x| (0.0..=1.0).contains(x)));
        let mass = rho.mass(&mesh.nodal_areas());
        assert!((mass - m).abs() <= 1e-8 * m);
        let floor = constant_mu1(&mesh, m, config.epsilon);
        assert!(eigs[1] >= floor * (1.0 - 1e-6), "m={m}: {} < {floor}", eigs[1]);
    }
}

#[test]
fn masked_vertices_stay_empty() {
    let mesh = make_icosphere(2).unwrap();
    let m = 2.5;
    let mask: Vec<bool> = geodesic_cap_field(&mesh, [1.0, 0.0, 0.0], m)
        .unwrap()
        .values()
        .iter()
        .map(|&v| v > 0.5)
        .collect();
    let mut config = DensityOptConfig::new(2, m);
    config.max_iters = 15;
    config.restarts = 1;
    config.exclusion_mask = Some(mask.clone());
    let (rho, trace, _) = optimize_density_detailed(&mesh, &config).unwrap();
    check_trace(&trace, m);
    assert!(rho.values().iter().zip(&mask).all(|(x, &masked)| !masked || *x == 0.0));
}

#[test]
fn identical_seeds_reproduce_traces() {
    let mesh = make_icosphere(1).unwrap();
    let mut config = DensityOptConfig::new(1, 3.0);
    config.max_iters = 10;
    config.restarts = 2;
    let a = optimize_density_detailed(&mesh, &config).unwrap();
    let b = optimize_density_detailed(&mesh, &config).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0, b.0);
}

#[test]
fn cap_reference_decreases_with_mass() {
    let masses: Vec<f64> = (1..=50).map(|i| 2.0 * PI * i as f64 / 50.0).collect();
    let values: Vec<f64> = masses.iter().map(|&m| cap_reference_mu1(m, 10_000).unwrap()).collect();
    for w in values.windows(2) {
        assert!(w[1] < w[0] * (1.0 + 1e-9), "{values:?}");
    }
    assert!((values[49] - 2.0).abs() < 1e-4);
}

#[test]
fn regularized_cap_indicator_matches_reference() {
    let n = 10_000;
    for m in [1.0, 2.0, PI, 2.0 * PI] {
        let theta = (1.0 - m / (2.0 * PI)).acos();
        let cap = LatitudeDensity::cap(n, theta).unwrap();
        let mu = axisym_mu1(&cap, 1e-6).unwrap();
        let reference = cap_reference_mu1(m, n).unwrap();
        assert!((mu / reference - 1.0).abs() <= 2e-2, "m={m}: {mu} vs {reference}");
    }
    let sphere = LatitudeDensity::constant(n, 1.0).unwrap();
    assert!((axisym_mu1(&sphere, 1e-6).unwrap() - 2.0).abs() < 1e-3);
}

#[test]
fn axisym_mu1_is_reflection_invariant() {
    let n = 300;
    let values: Vec<f64> = (0..=n)
        .map(|i| ((i as f64 * 0.37).sin() * 0.5 + 0.5).clamp(0.0, 1.0))
        .collect();
    let rho = LatitudeDensity::new(values).unwrap();
    let a = axisym_mu1(&rho, 1e-4).unwrap();
    let b = axisym_mu1(&rho.reflected(), 1e-4).unwrap();
    assert!((a - b).abs() <= 1e-8 * a);
}

/// Largest distance, in grid cells, from a node of one set to the other.
fn hausdorff_cells(a: &[usize], b: &[usize]) -> usize {
    let one_way = |x: &[usize], y: &[usize]| {
        x.iter()
            .map(|i| y.iter().map(|j| i.abs_diff(*j)).min().unwrap())
            .max()
            .unwrap()
    };
    one_way(a, b).max(one_way(b, a))
}

#[test]
fn small_mass_1d_optimum_is_a_cap() {
    let (n, m) = (100, 2.0);
    let config = AxisymOptConfig {
        restarts: 2,
        ..AxisymOptConfig::default()
    };
    let (rho, trace, _) = optimize_density_1d_detailed(m, n, &config).unwrap();
    check_trace(&trace, m);
    assert!((rho.mass() - m).abs() <= 1e-8 * m);
    let theta = (1.0 - m / (2.0 * PI)).acos();
    let cap: Vec<usize> = (0..=n).filter(|&i| PI * i as f64 / n as f64 <= theta).collect();
    let support = |r: &LatitudeDensity| (0..=n).filter(|&i| r.values()[i] > 0.5).collect::<Vec<_>>();
    let distance = hausdorff_cells(&support(&rho), &cap).min(hausdorff_cells(&support(&rho.reflected()), &cap));
    assert!(distance <= 2, "{distance}");
}

#[test]
fn large_mass_1d_optimum_beats_the_cap() {
    let (n, m) = (100, 4.98);
    let config = AxisymOptConfig {
        restarts: 2,
        ..AxisymOptConfig::default()
    };
    let (rho, _, eigs) = optimize_density_1d_detailed(m, n, &config).unwrap();
    assert!((rho.mass() - m).abs() <= 1e-8 * m);
    let cap = cap_reference_mu1(m, 10_000).unwrap();
    assert!(eigs[1] > cap, "{} vs {cap}", eigs[1]);
}
