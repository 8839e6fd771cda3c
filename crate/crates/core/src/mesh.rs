//! Closed triangulated surfaces and per-vertex densities on them.
//!
//! Elements are flat embedded triangles carrying P1 hat functions; the
//! tangential gradient of each hat function is constant per triangle and is
//! computed once at construction.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Largest accepted icosphere subdivision depth (10 485 762 vertices at 10,
/// 655 362 at 8).
pub const MAX_SUBDIVISIONS: usize = 8;

/// Which analytic surface a mesh approximates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    /// Unit sphere centered at the origin.
    Sphere,
    /// Torus `((R + r cos v) cos u, r sin v, (R + r cos v) sin u)`.
    Torus { major: f64, minor: f64 },
    /// Anything else, e.g. a mesh read from disk.
    Imported,
}

#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
    gradients: Vec<[Vec3; 3]>,
    surface: Surface,
}

impl SurfaceMesh {
    /// Builds a mesh and checks every structural invariant: valid indices,
    /// non-degenerate triangles, and a closed orientable edge structure.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>, surface: Surface) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::Size("mesh needs at least one vertex and one triangle"));
        }
        let n = vertices.len();
        if vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::Geometry("non-finite vertex coordinate"));
        }
        for t in &triangles {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::structural("triangle vertex index", n, *t.iter().max().unwrap()));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::Geometry("triangle with repeated vertex"));
            }
        }
        if surface == Surface::Sphere && vertices.iter().any(|&v| (geom::norm(v) - 1.0).abs() > 1e-12) {
            return Err(Error::Geometry("sphere vertex off the unit sphere"));
        }
        check_closed_orientable(&triangles)?;

        let mut areas = Vec::with_capacity(triangles.len());
        let mut gradients = Vec::with_capacity(triangles.len());
        for t in &triangles {
            let [p0, p1, p2] = [vertices[t[0]], vertices[t[1]], vertices[t[2]]];
            let normal = geom::cross(geom::sub(p1, p0), geom::sub(p2, p0));
            let twice_area = geom::norm(normal);
            let scale =
                geom::dot(geom::sub(p1, p0), geom::sub(p1, p0)).max(geom::dot(geom::sub(p2, p0), geom::sub(p2, p0)));
            if !(twice_area > 1e-14 * scale) {
                return Err(Error::Geometry("degenerate triangle"));
            }
            let unit = geom::scale(normal, 1.0 / twice_area);
            let edges = [geom::sub(p2, p1), geom::sub(p0, p2), geom::sub(p1, p0)];
            let g = edges.map(|e| geom::scale(geom::cross(unit, e), 1.0 / twice_area));
            areas.push(0.5 * twice_area);
            gradients.push(g);
        }
        Ok(Self {
            vertices,
            triangles,
            areas,
            gradients,
            surface,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn surface(&self) -> Surface {
        self.surface
    }

    /// Area of every triangle, in triangle order.
    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Tangential gradients of the three hat functions of triangle `t`.
    pub fn gradients(&self, t: usize) -> &[Vec3; 3] {
        &self.gradients[t]
    }

    /// Sum of triangle areas, accumulated in triangle order. This is the
    /// same quadrature that the finite element mass uses.
    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// `g[l] = ∫ φ_l`, i.e. one third of the area of every incident triangle.
    pub fn nodal_areas(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let a = self.areas[t] / 3.0;
            for &i in tri {
                g[i] += a;
            }
        }
        g
    }

    /// Unique undirected edges `[i, j]` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut edges: Vec<[usize; 2]> = self
            .triangles
            .iter()
            .flat_map(|t| [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]])
            .map(|[a, b]| if a < b { [a, b] } else { [b, a] })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Sorted vertex neighbors along mesh edges.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_vertices()];
        for [a, b] in self.edges() {
            out[a].push(b);
            out[b].push(a);
        }
        for list in &mut out {
            list.sort_unstable();
        }
        out
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edge_lengths().fold(f64::INFINITY, f64::min)
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edge_lengths().fold(0.0, f64::max)
    }

    fn edge_lengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.triangles.iter().flat_map(move |t| {
            [(0, 1), (1, 2), (2, 0)]
                .into_iter()
                .map(move |(a, b)| geom::norm(geom::sub(self.vertices[t[a]], self.vertices[t[b]])))
        })
    }

    /// Sum over triangles of `(1/3) centroid · n A`, the enclosed volume.
    /// Positive for outward-oriented meshes.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [p0, p1, p2] = [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]];
                geom::dot(p0, geom::cross(p1, p2)) / 6.0
            })
            .sum()
    }

    /// Surface parameters of vertex `i`: (colatitude, longitude) on the
    /// sphere, `(u, v)` on a torus. Imported meshes use the spherical angles
    /// of the vertex direction.
    pub fn parameters(&self, i: usize) -> (f64, f64) {
        let [x, y, z] = self.vertices[i];
        match self.surface {
            Surface::Torus { major, .. } => {
                let u = z.atan2(x);
                let v = y.atan2((x * x + z * z).sqrt() - major);
                (wrap_angle(u), wrap_angle(v))
            }
            Surface::Sphere | Surface::Imported => {
                let r = (x * x + y * y + z * z).sqrt();
                let theta = (z / r).clamp(-1.0, 1.0).acos();
                (theta, wrap_angle(y.atan2(x)))
            }
        }
    }
}

fn check_closed_orientable(triangles: &[[usize; 3]]) -> Result<()> {
    let mut directed: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for t in triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *directed.entry((a, b)).or_insert(0) += 1;
        }
    }
    for (&(a, b), &count) in &directed {
        if count != 1 || directed.get(&(b, a)) != Some(&1) {
            return Err(Error::Geometry(
                "mesh is not closed and consistently oriented (edge not shared by exactly two opposite triangles)",
            ));
        }
    }
    Ok(())
}

/// Regular icosahedron inscribed in the unit sphere, subdivided
/// `subdivisions` times by edge midpoints projected back to the sphere.
/// Maps an `atan2` angle into `[0, 2π)`.
fn wrap_angle(a: f64) -> f64 {
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

pub fn make_icosphere(subdivisions: usize) -> Result<SurfaceMesh> {
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(Error::Size("icosphere subdivision depth above 8"));
    }
    let t = (1.0 + 5.0.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(geom::normalize)
    .collect();
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoints: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = if a < b { (a, b) } else { (b, a) };
            *midpoints.entry(key).or_insert_with(|| {
                let m = geom::normalize(geom::scale(geom::add(vertices[a], vertices[b]), 0.5));
                vertices.push(m);
                vertices.len() - 1
            })
        };
        let mut refined = Vec::with_capacity(triangles.len() * 4);
        for &[a, b, c] in &triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            refined.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = refined;
    }
    SurfaceMesh::new(vertices, triangles, Surface::Sphere)
}

/// Structured periodic torus grid with `nu · nv` vertices; vertex `(i, j)`
/// sits at `u = 2πi/nu`, `v = 2πj/nv` and has index `i · nv + j`.
pub fn make_torus(major: f64, minor: f64, nu: usize, nv: usize) -> Result<SurfaceMesh> {
    if !(minor > 0.0 && minor < major) {
        return Err(Error::Geometry("torus radii must satisfy 0 < r < R"));
    }
    if nu < 3 || nv < 3 {
        return Err(Error::Size("torus grid needs at least 3 points per direction"));
    }
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * PI * j as f64 / nv as f64;
            let ring = major + minor * v.cos();
            vertices.push([ring * u.cos(), minor * v.sin(), ring * u.sin()]);
        }
    }
    let idx = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, d, c]);
            triangles.push([a, c, b]);
        }
    }
    SurfaceMesh::new(vertices, triangles, Surface::Torus { major, minor })
}

/// Sum of triangle areas.
pub fn total_area(mesh: &SurfaceMesh) -> f64 {
    mesh.total_area()
}

/// Geodesic radius `θ_m = arccos(1 − m/2π)` of the spherical cap of area `m`.
pub fn cap_radius_from_area(m: f64) -> Result<f64> {
    if !(0.0..=4.0 * PI).contains(&m) {
        return Err(Error::domain("cap area must lie in [0, 4π]", m));
    }
    Ok((1.0 - m / (2.0 * PI)).clamp(-1.0, 1.0).acos())
}

/// Area `2π(1 − cos θ)` of the cap of geodesic radius `θ`.
pub fn cap_area_from_radius(theta: f64) -> f64 {
    2.0 * PI * (1.0 - theta.cos())
}

/// Indicator of the geodesic cap of area `m` around `center`. A vertex is in
/// the cap when its cosine to the center is at least `1 − m/2π` minus 1e-9.
pub fn geodesic_cap_field(mesh: &SurfaceMesh, center: Vec3, m: f64) -> Result<DensityField> {
    if matches!(mesh.surface(), Surface::Torus { .. }) {
        return Err(Error::Geometry("geodesic caps are only defined on sphere meshes"));
    }
    if !(m > 0.0 && m < 4.0 * PI) {
        return Err(Error::domain("cap area must lie in (0, 4π)", m));
    }
    let len = geom::norm(center);
    if !((len - 1.0).abs() <= 1e-6) {
        return Err(Error::domain("cap center must be a unit vector", len));
    }
    let center = geom::scale(center, 1.0 / len);
    let threshold = 1.0 - m / (2.0 * PI) - 1e-9;
    let values = mesh
        .vertices()
        .iter()
        .map(|&v| {
            if geom::dot(geom::normalize(v), center) >= threshold {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(DensityField { values })
}

/// Per-vertex density with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain("density value outside [0, 1]", bad));
        }
        Ok(Self { values })
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    /// Clips to `[0, 1]`; NaN becomes 0.
    pub fn clipped(values: Vec<f64>) -> Self {
        Self {
            values: values
                .into_iter()
                .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
                .collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `ρ · g`.
    pub fn mass(&self, g: &[f64]) -> f64 {
        self.values.iter().zip(g).map(|(r, g)| r * g).sum()
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.values.len() != n {
            return Err(Error::structural("density length", n, self.values.len()));
        }
        Ok(())
    }
}
