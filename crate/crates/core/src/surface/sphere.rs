//! Icosphere triangulation of the unit sphere with cotangent stiffness and
//! lumped mixed-Voronoi mass.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{GeometryError, Result};
use crate::linalg::{conjugate_gradient, CgOptions, CsrMatrix};

pub type Point = Vector3<f64>;

/// Closed triangulated unit sphere.
#[derive(Debug, Clone)]
pub struct SphereMesh {
    level: usize,
    vertices: Vec<Point>,
    faces: Vec<[usize; 3]>,
    /// Cotangent stiffness `S`, positive semidefinite, `fᵀ S f = ∫|∇f|²`.
    stiffness: CsrMatrix,
    /// Off-diagonal cotangent weights per vertex, `(j, w_ij)`.
    edges: Vec<Vec<(usize, f64)>>,
    /// Lumped mixed-Voronoi mass, rescaled so that the total is exactly `4π`.
    mass: Vec<f64>,
    vertex_faces: Vec<Vec<usize>>,
    edge_count: usize,
}

fn icosahedron() -> (Vec<Point>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
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
    ];
    let verts = raw.iter().map(|p| Vector3::new(p[0], p[1], p[2]).normalize()).collect();
    let faces = vec![
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
    (verts, faces)
}

fn subdivide(verts: &mut Vec<Point>, faces: &[[usize; 3]]) -> Vec<[usize; 3]> {
    let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Point>| {
        let key = (a.min(b), a.max(b));
        *cache.entry(key).or_insert_with(|| {
            verts.push(((verts[a] + verts[b]) * 0.5).normalize());
            verts.len() - 1
        })
    };
    let mut out = Vec::with_capacity(faces.len() * 4);
    for &[a, b, c] in faces {
        let ab = midpoint(a, b, verts);
        let bc = midpoint(b, c, verts);
        let ca = midpoint(c, a, verts);
        out.push([a, ab, ca]);
        out.push([b, bc, ab]);
        out.push([c, ca, bc]);
        out.push([ab, bc, ca]);
    }
    out
}

fn cot(u: Point, v: Point) -> f64 {
    u.dot(&v) / u.cross(&v).norm()
}

impl SphereMesh {
    pub(crate) fn icosphere(level: usize) -> Result<Self> {
        if level > 8 {
            return Err(GeometryError::InvalidArgument(format!("icosphere level {level} exceeds 8")));
        }
        let (mut vertices, mut faces) = icosahedron();
        for _ in 0..level {
            faces = subdivide(&mut vertices, &faces);
        }
        Self::from_triangulation(level, vertices, faces)
    }

    fn from_triangulation(level: usize, vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        let mut triplets = Vec::with_capacity(faces.len() * 9);
        let mut mass = vec![0.0; n];
        let mut vertex_faces = vec![Vec::new(); n];
        let mut edge_set = HashMap::new();
        for (fi, &[a, b, c]) in faces.iter().enumerate() {
            let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
            let area = 0.5 * (pb - pa).cross(&(pc - pa)).norm();
            let obtuse = [(a, b, c), (b, c, a), (c, a, b)]
                .iter()
                .position(|&(i, j, k)| (vertices[j] - vertices[i]).dot(&(vertices[k] - vertices[i])) < 0.0);
            for (corner, (i, j, k)) in [(a, b, c), (b, c, a), (c, a, b)].into_iter().enumerate() {
                mass[i] += match obtuse {
                    None => {
                        let (pi, pj, pk) = (vertices[i], vertices[j], vertices[k]);
                        ((pj - pi).norm_squared() * cot(pi - pk, pj - pk)
                            + (pk - pi).norm_squared() * cot(pi - pj, pk - pj))
                            / 8.0
                    }
                    Some(o) if o == corner => area / 2.0,
                    Some(_) => area / 4.0,
                };
                vertex_faces[i].push(fi);
            }
            // half-cotangent of the angle opposite each edge
            for (i, j, k) in [(a, b, c), (b, c, a), (c, a, b)] {
                let w = 0.5 * cot(vertices[i] - vertices[k], vertices[j] - vertices[k]);
                triplets.push((i, j, -w));
                triplets.push((j, i, -w));
                triplets.push((i, i, w));
                triplets.push((j, j, w));
                *edge_set.entry((i.min(j), i.max(j))).or_insert(0) += 1;
            }
        }
        if edge_set.values().any(|&count| count != 2) {
            return Err(GeometryError::Contract("triangulation is not a closed 2-manifold".into()));
        }
        let euler = n as i64 - edge_set.len() as i64 + faces.len() as i64;
        if euler != 2 {
            return Err(GeometryError::Contract(format!("sphere mesh has Euler characteristic {euler}")));
        }
        let total: f64 = mass.iter().sum();
        let scale = 4.0 * PI / total;
        mass.iter_mut().for_each(|m| *m *= scale);
        let stiffness = CsrMatrix::from_triplets(n, triplets);
        let edges = (0..n).map(|i| stiffness.row(i).filter(|&(j, _)| j != i).map(|(j, v)| (j, -v)).collect()).collect();
        Ok(SphereMesh { level, vertices, faces, stiffness, edges, mass, vertex_faces, edge_count: edge_set.len() })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// `Δ₀ f = -½ M⁻¹ S f`.
    pub fn laplace0(&self, f: &[f64]) -> Vec<f64> {
        let mut y = self.stiffness.mul_vec(f);
        for (yi, mi) in y.iter_mut().zip(&self.mass) {
            *yi *= -0.5 / mi;
        }
        y
    }

    /// Pointwise `(∇f, ∇h)` as the carré du champ of the discrete Laplacian,
    /// `Δ(fh) - fΔh - hΔf` under the half convention.
    pub fn grad_inner(&self, f: &[f64], h: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let s: f64 = self.edges[i].iter().map(|&(j, w)| w * (f[j] - f[i]) * (h[j] - h[i])).sum();
                s / (2.0 * self.mass[i])
            })
            .collect()
    }

    fn project_mean(&self, v: &mut [f64]) {
        // remove the component along the constant vector in the Euclidean sense
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= mean);
    }

    /// Zero-mean (w.r.t. the mass) solution of `Δ₀ φ = rhs`; the weighted mean
    /// of `rhs` is discarded.
    pub fn solve_poisson(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let total: f64 = self.mass.iter().sum();
        let mean = rhs.iter().zip(&self.mass).map(|(r, m)| r * m).sum::<f64>() / total;
        // S φ = -2 M (rhs - mean)
        let b: Vec<f64> = rhs.iter().zip(&self.mass).map(|(r, m)| -2.0 * m * (r - mean)).collect();
        let diag = self.stiffness.diagonal();
        let project = |v: &mut [f64]| self.project_mean(v);
        let (mut phi, _) = conjugate_gradient(
            |x, y| self.stiffness.mul_vec_into(x, y),
            Some(&diag),
            &b,
            None,
            Some(&project),
            CgOptions { rel_tol: 1e-12, max_iter: 50_000 },
        )?;
        let shift = phi.iter().zip(&self.mass).map(|(p, m)| p * m).sum::<f64>() / total;
        phi.iter_mut().for_each(|p| *p -= shift);
        Ok(phi)
    }

    /// Solves `(M + coeff/4 · S M⁻¹ S) x = M rhs`, i.e. `(I + coeff Δ₀²) x = rhs`.
    pub fn solve_biharmonic_shifted(&self, rhs: &[f64], coeff: f64, x0: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = self.len();
        let b: Vec<f64> = rhs.iter().zip(&self.mass).map(|(r, m)| r * m).collect();
        let mut diag: Vec<f64> = self.mass.clone();
        for (i, d) in diag.iter_mut().enumerate() {
            let s: f64 = self.stiffness.row(i).map(|(j, v)| v * v / self.mass[j]).sum();
            *d += 0.25 * coeff * s;
        }
        let apply = |x: &[f64], y: &mut [f64]| {
            let mut t = self.stiffness.mul_vec(x);
            for (ti, mi) in t.iter_mut().zip(&self.mass) {
                *ti /= mi;
            }
            self.stiffness.mul_vec_into(&t, y);
            for i in 0..n {
                y[i] = self.mass[i] * x[i] + 0.25 * coeff * y[i];
            }
        };
        let (x, _) =
            conjugate_gradient(apply, Some(&diag), &b, x0, None, CgOptions { rel_tol: 1e-10, max_iter: 50_000 })?;
        Ok(x)
    }

    pub fn node_distance(&self, a: usize, b: usize) -> f64 {
        let c = self.vertices[a].dot(&self.vertices[b]).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Barycentric weights of the radial projection of `q` onto face `f`.
    fn face_weights(&self, f: usize, q: &Point) -> [f64; 3] {
        let [a, b, c] = self.faces[f];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let wa = q.dot(&pb.cross(&pc));
        let wb = q.dot(&pc.cross(&pa));
        let wc = q.dot(&pa.cross(&pb));
        let s = wa + wb + wc;
        [wa / s, wb / s, wc / s]
    }

    fn nearest_vertex(&self, q: &Point, start: usize) -> usize {
        let mut cur = start;
        let mut best = self.vertices[cur].dot(q);
        loop {
            let mut moved = false;
            for &(j, _) in &self.edges[cur] {
                let d = self.vertices[j].dot(q);
                if d > best {
                    best = d;
                    cur = j;
                    moved = true;
                }
            }
            if !moved {
                return cur;
            }
        }
    }

    /// Locates the face containing the radial projection of `q`, returning the
    /// face and its barycentric weights. `hint` seeds the walk.
    pub fn locate(&self, q: &Point, hint: usize) -> (usize, [f64; 3]) {
        let v = self.nearest_vertex(q, hint);
        let score = |w: &[f64; 3]| w[0].min(w[1]).min(w[2]);
        let mut best: Option<(usize, [f64; 3])> = None;
        let consider = |f: usize, best: &mut Option<(usize, [f64; 3])>| {
            let w = self.face_weights(f, q);
            if best.as_ref().is_none_or(|(_, bw)| score(&w) > score(bw)) {
                *best = Some((f, w));
            }
        };
        for &f in &self.vertex_faces[v] {
            consider(f, &mut best);
        }
        if best.as_ref().is_some_and(|(_, w)| score(w) >= -1e-12) {
            return best.expect("checked");
        }
        for &(j, _) in &self.edges[v] {
            for &f in &self.vertex_faces[j] {
                consider(f, &mut best);
            }
        }
        if best.as_ref().is_some_and(|(_, w)| score(w) >= -1e-12) {
            return best.expect("checked");
        }
        for f in 0..self.faces.len() {
            if self.faces[f].iter().any(|&i| self.vertices[i].dot(q) > 0.0) {
                consider(f, &mut best);
            }
        }
        best.expect("mesh has faces")
    }

    /// Barycentric interpolation of a vertex field at the sphere point `q`.
    pub fn interpolate(&self, values: &[f64], q: &Point, hint: usize) -> f64 {
        let (f, w) = self.locate(q, hint);
        let [a, b, c] = self.faces[f];
        w[0] * values[a] + w[1] * values[b] + w[2] * values[c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        for level in 0..4 {
            let m = SphereMesh::icosphere(level).unwrap();
            let f = 20 * 4usize.pow(level as u32);
            assert_eq!(m.faces().len(), f);
            assert_eq!(m.len(), 10 * 4usize.pow(level as u32) + 2);
            assert_eq!(m.len() + f - m.edge_count(), 2);
        }
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let m = SphereMesh::icosphere(2).unwrap();
        let ones = vec![1.0; m.len()];
        assert!(m.stiffness().mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        assert!((m.mass().iter().sum::<f64>() - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn locate_vertex_gives_unit_weight() {
        let m = SphereMesh::icosphere(2).unwrap();
        let vals: Vec<f64> = (0..m.len()).map(|i| i as f64).collect();
        for i in [0, 7, 41, 100] {
            let v = m.interpolate(&vals, &m.vertices()[i], 0);
            assert!((v - i as f64).abs() < 1e-9);
        }
    }
}
