use std::f64::consts::PI;

use neumann_core::levelset::{
    advect, cost_and_velocity, domain_area, init_random_levelset, optimize_levelset_detailed, redistance,
    regularize_velocity, smoothed_indicator, triangle_gradient_norms, LevelSetConfig, LevelSetField,
};
use neumann_core::mesh::{cap_radius_from_area, make_icosphere};
use neumann_core::SurfaceMesh;
use proptest::prelude::*;

/// Signed geodesic distance to the circle of colatitude `theta0`.
fn cap_cone(mesh: &SurfaceMesh, theta0: f64) -> Vec<f64> {
    (0..mesh.n_vertices()).map(|i| mesh.parameters(i).0 - theta0).collect()
}

/// Mean colatitude of the zero crossings along mesh edges.
fn zero_colatitude(mesh: &SurfaceMesh, phi: &[f64]) -> f64 {
    let v = mesh.vertices();
    let (mut sum, mut count) = (0.0, 0.0);
    for [a, b] in mesh.edges() {
        if (phi[a] < 0.0) != (phi[b] < 0.0) {
            let t = phi[a] / (phi[a] - phi[b]);
            let p: Vec<f64> = (0..3).map(|i| v[a][i] + t * (v[b][i] - v[a][i])).collect();
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            sum += (p[2] / r).acos();
            count += 1.0;
        }
    }
    sum / count
}

#[test]
fn unit_speed_moves_cap_boundary_at_unit_speed() {
    let mesh = make_icosphere(5).unwrap();
    let theta0 = cap_radius_from_area(2.0).unwrap();
    let ls = LevelSetField::new(cap_cone(&mesh, theta0), 1e-5, 20).unwrap();
    let (z0, a0) = (zero_colatitude(&mesh, &ls.phi), domain_area(&mesh, &ls.phi));
    let dt = 0.05;
    let moved = advect(&mesh, &ls, &vec![1.0; mesh.n_vertices()], dt).unwrap();
    let speed = (zero_colatitude(&mesh, &moved.phi) - z0) / dt;
    assert!((speed - 1.0).abs() <= 0.02, "speed {speed}");
    let rate = (domain_area(&mesh, &moved.phi) - a0) / dt;
    let perimeter = 2.0 * PI * (theta0 + dt / 2.0).sin();
    assert!(
        (rate / perimeter - 1.0).abs() <= 0.05,
        "rate {rate} perimeter {perimeter}"
    );
}

#[test]
fn zero_speed_leaves_field_unchanged() {
    let mesh = make_icosphere(2).unwrap();
    let ls = LevelSetField::new(init_random_levelset(&mesh, 2, 2, 5), 1e-5, 20).unwrap();
    let out = advect(&mesh, &ls, &vec![0.0; mesh.n_vertices()], 0.1).unwrap();
    assert_eq!(out.phi, ls.phi);
}

#[test]
fn redistancing_a_distance_function_is_nearly_idempotent() {
    let mesh = make_icosphere(5).unwrap();
    let theta0 = cap_radius_from_area(2.0).unwrap();
    let ls = LevelSetField::new(cap_cone(&mesh, theta0), 1e-5, 20).unwrap();
    let r = redistance(&mesh, &ls).unwrap();
    assert!(r.has_interface);
    let mut worst: f64 = 0.0;
    for (d, p) in r.field.phi.iter().zip(&ls.phi) {
        if p.abs() > 0.1 {
            worst = worst.max((d - p).abs() / p.abs());
        }
    }
    assert!(worst <= 0.02, "worst relative error {worst}");
}

#[test]
fn redistancing_ignores_scale_and_keeps_signs() {
    let mesh = make_icosphere(3).unwrap();
    let phi = init_random_levelset(&mesh, 3, 3, 9);
    let ls = LevelSetField::new(phi.clone(), 1e-5, 20).unwrap();
    let scaled = LevelSetField::new(phi.iter().map(|v| 10.0 * v).collect(), 1e-5, 20).unwrap();
    let a = redistance(&mesh, &ls).unwrap().field.phi;
    let b = redistance(&mesh, &scaled).unwrap().field.phi;
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
    }
    let neighbors = mesh.vertex_neighbors();
    for (i, (d, p)) in a.iter().zip(&phi).enumerate() {
        if neighbors[i].iter().all(|&j| (phi[j] < 0.0) == (*p < 0.0)) {
            assert_eq!(*d < 0.0, *p < 0.0, "vertex {i}");
        }
    }
    assert!(triangle_gradient_norms(&mesh, &a).iter().all(|&g| g <= 2.0));
}

#[test]
fn redistancing_restores_unit_gradient() {
    for level in [2, 3, 4] {
        let mesh = make_icosphere(level).unwrap();
        for m in [1.0, 2.0, 6.0, 10.0] {
            let theta0 = cap_radius_from_area(m).unwrap();
            let phi = cap_cone(&mesh, theta0)
                .iter()
                .map(|d| 3.0 * d.powi(3) + 0.2 * d)
                .collect();
            let ls = LevelSetField::new(phi, 1e-5, 20).unwrap();
            let norms = triangle_gradient_norms(&mesh, &redistance(&mesh, &ls).unwrap().field.phi);
            let unit = norms.iter().filter(|g| (0.5..=2.0).contains(*g)).count();
            assert!(
                unit as f64 >= 0.99 * norms.len() as f64,
                "level {level} m={m}: {unit} of {}",
                norms.len()
            );
        }
    }
}

#[test]
fn random_levelsets_are_seeded() {
    let mesh = make_icosphere(3).unwrap();
    assert_eq!(
        init_random_levelset(&mesh, 3, 3, 42),
        init_random_levelset(&mesh, 3, 3, 42)
    );
    assert_ne!(
        init_random_levelset(&mesh, 3, 3, 42),
        init_random_levelset(&mesh, 3, 3, 43)
    );
    let flat = init_random_levelset(&mesh, 0, 0, 7);
    assert!(flat.iter().all(|&v| v == flat[0]));
    assert_eq!(flat[0].abs(), 1.0);
}

#[test]
fn random_levelsets_split_the_sphere_on_average() {
    let mesh = make_icosphere(3).unwrap();
    let g = mesh.nodal_areas();
    let total: f64 = g.iter().sum();
    let mean = (0..100u64)
        .map(|seed| {
            let phi = init_random_levelset(&mesh, 3, 3, seed);
            phi.iter()
                .zip(&g)
                .filter(|(p, _)| **p < 0.0)
                .map(|(_, w)| w)
                .sum::<f64>()
                / total
        })
        .sum::<f64>()
        / 100.0;
    assert!((0.35..=0.65).contains(&mean), "{mean}");
}

proptest! {
    #[test]
    fn indicator_decreases_with_phi(a in -1e-3f64..1e-3, d in 1e-8f64..1e-3, sigma in 1e-5f64..1e-3) {
        let ls = LevelSetField::new(vec![a, a + d], sigma, 20).unwrap();
        let h = smoothed_indicator(&ls);
        prop_assert!(h.values()[0] > h.values()[1]);
        prop_assert!(h.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn velocity_smoothing_keeps_constants_and_lowers_energy() {
    let mesh = make_icosphere(3).unwrap();
    let ones = vec![2.5; mesh.n_vertices()];
    for v in regularize_velocity(&mesh, &ones, 0.1).unwrap() {
        assert!((v - 2.5).abs() < 1e-10);
    }
    let raw = init_random_levelset(&mesh, 4, 4, 3);
    let tiny = regularize_velocity(&mesh, &raw, 1e-9).unwrap();
    for (a, b) in tiny.iter().zip(&raw) {
        assert!((a - b).abs() < 1e-5);
    }
    let smooth = regularize_velocity(&mesh, &raw, 0.1).unwrap();
    let energy = |f: &[f64]| -> f64 {
        triangle_gradient_norms(&mesh, f)
            .iter()
            .zip(mesh.areas())
            .map(|(g, a)| g * g * a)
            .sum()
    };
    assert!(energy(&smooth) < energy(&raw));
}

#[test]
fn cost_at_target_area_is_area_times_mu() {
    let mesh = make_icosphere(3).unwrap();
    let theta0 = cap_radius_from_area(3.0).unwrap();
    let ls = LevelSetField::new(cap_cone(&mesh, theta0), 1e-5, 20).unwrap();
    let area = smoothed_indicator(&ls).mass(&mesh.nodal_areas());
    let config = LevelSetConfig::new(1, area);
    let cv = cost_and_velocity(&mesh, &ls, &config).unwrap();
    assert!((cv.area - area).abs() <= 1e-12 * area);
    assert!((cv.cost - area * cv.mu).abs() <= 1e-12 * cv.cost);

    let off = LevelSetConfig::new(1, area + 0.5);
    let penalized = cost_and_velocity(&mesh, &ls, &off).unwrap();
    let expected = area * penalized.mu - off.b * 0.25;
    assert!((penalized.cost - expected).abs() <= 1e-10 * expected.abs());
}

#[test]
fn small_step_along_velocity_raises_cost() {
    let mesh = make_icosphere(3).unwrap();
    let ls = LevelSetField::new(init_random_levelset(&mesh, 2, 2, 11), 1e-5, 20).unwrap();
    let ls = redistance(&mesh, &ls).unwrap().field;
    let config = LevelSetConfig::new(1, 3.0);
    let cv = cost_and_velocity(&mesh, &ls, &config).unwrap();
    let v = regularize_velocity(&mesh, &cv.velocity, config.alpha).unwrap();
    let vmax = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let moved = advect(&mesh, &ls, &v, 1e-3 / vmax).unwrap();
    let after = cost_and_velocity(&mesh, &moved, &config).unwrap();
    assert!(after.cost > cv.cost, "{} -> {}", cv.cost, after.cost);
}

#[test]
fn reported_cost_is_best_accepted_iterate() {
    let mesh = make_icosphere(2).unwrap();
    let mut config = LevelSetConfig::new(1, 3.0);
    config.n_steps = 30;
    config.adaptive_steps = 10;
    config.restarts = 2;
    let outcome = optimize_levelset_detailed(&mesh, &config).unwrap();
    let best = outcome
        .trace
        .accepted()
        .map(|r| r.objective)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(outcome.cost, best);
    let again = optimize_levelset_detailed(&mesh, &config).unwrap();
    assert_eq!(outcome.trace, again.trace);
}
