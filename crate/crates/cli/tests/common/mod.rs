#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;
use std::process::Output;

/// First and second `z`-derivatives of `F(z) = ₂F₁(−ν, ν+1; 1; z)`, so that
/// `P_ν(cos θ) = F((1 − cos θ)/2)`.
fn hypergeometric_derivatives(nu: f64, z: f64) -> (f64, f64) {
    let (a, b) = (-nu, nu + 1.0);
    let mut coeff = 1.0;
    let (mut d1, mut d2) = (0.0, 0.0);
    for n in 1..200_000 {
        let nf = n as f64;
        coeff *= (a + nf - 1.0) * (b + nf - 1.0) / (nf * nf);
        let t1 = nf * coeff * z.powi(n - 1);
        d1 += t1;
        if n >= 2 {
            d2 += nf * (nf - 1.0) * coeff * z.powi(n - 2);
        }
        if n > 20 && t1.abs() < 1e-18 * d1.abs().max(1e-300) {
            break;
        }
    }
    (d1, d2)
}

/// First nonzero Neumann eigenvalue of the geodesic cap of area `m`. It
/// belongs to the azimuthal order 1 mode `sin θ P_ν'(cos θ) cos φ`, whose
/// normal derivative vanishes at the rim `z₀ = m/4π` when
/// `(1 − 2z₀) F'(z₀) + 2 z₀ (1 − z₀) F''(z₀) = 0`. Returns `ν(ν+1)` for the
/// smallest root `ν > 0`.
pub fn cap_mu1_oracle(m: f64) -> f64 {
    let z = m / (4.0 * PI);
    let f = |nu: f64| {
        let (d1, d2) = hypergeometric_derivatives(nu, z);
        (1.0 - 2.0 * z) * d1 + 2.0 * z * (1.0 - z) * d2
    };
    let step = 0.01;
    let mut lo = 1e-3;
    while f(lo).signum() == f(lo + step).signum() {
        lo += step;
        assert!(lo < 1e4, "no sign change found");
    }
    let mut hi = lo + step;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid).signum() == f(lo).signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    nu * (nu + 1.0)
}

pub fn neumann(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_neumann"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn neumann_in(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    let out = dir.to_str().unwrap();
    all.extend(["--out", out]);
    neumann(&all)
}

/// Rows of a CSV file keyed by its header.
pub fn read_csv(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let mut reader = csv::Reader::from_path(path).expect("csv opens");
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            header.iter().cloned().zip(r.iter().map(String::from)).collect()
        })
        .collect()
}

pub fn field(row: &std::collections::HashMap<String, String>, key: &str) -> f64 {
    row[key]
        .parse()
        .unwrap_or_else(|_| panic!("column {key} is not a number: {}", row[key]))
}
