//! Small dense/sparse helpers shared by the mesh operators, the implicit
//! flow solve and the eigensolver.

use crate::error::{GeometryError, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Compressed sparse row matrix with `f64` entries.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from unsorted triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("nonempty") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).find(|&(c, _)| c == i).map_or(0.0, |(_, v)| v)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { rel_tol: 1e-10, max_iter: 20_000 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// (semi)definite operator. When `project` is given it is applied to the
/// right-hand side and every residual, which keeps iterates inside the
/// complement of a known null space.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: Option<&[f64]>,
    rhs: &[f64],
    x0: Option<&[f64]>,
    project: Option<&dyn Fn(&mut [f64])>,
    opts: CgOptions,
) -> Result<(Vec<f64>, CgStats)> {
    let n = rhs.len();
    let mut b = rhs.to_vec();
    if let Some(p) = project {
        p(&mut b);
    }
    let b_norm = norm(&b);
    let mut x = x0.map_or_else(|| vec![0.0; n], |x| x.to_vec());
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], CgStats { iterations: 0, rel_residual: 0.0 }));
    }
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    if let Some(p) = project {
        p(&mut r);
    }
    let precondition = |r: &[f64], z: &mut [f64]| match diag {
        Some(d) => {
            for ((zi, ri), di) in z.iter_mut().zip(r).zip(d) {
                *zi = if *di > 0.0 { ri / di } else { *ri };
            }
        }
        None => z.copy_from_slice(r),
    };
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    if let Some(p) = project {
        p(&mut z);
    }
    let mut p_dir = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm(&r) / b_norm;
    for it in 0..opts.max_iter {
        if res <= opts.rel_tol {
            return Ok((x, CgStats { iterations: it, rel_residual: res }));
        }
        apply(&p_dir, &mut ap);
        let pap = dot(&p_dir, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(GeometryError::SolverFailure { iterations: it, residual: res });
        }
        let alpha = rz / pap;
        axpy(alpha, &p_dir, &mut x);
        axpy(-alpha, &ap, &mut r);
        if let Some(p) = project {
            p(&mut r);
        }
        res = norm(&r) / b_norm;
        precondition(&r, &mut z);
        if let Some(p) = project {
            p(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p_dir.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    if res <= opts.rel_tol {
        Ok((x, CgStats { iterations: opts.max_iter, rel_residual: res }))
    } else {
        Err(GeometryError::SolverFailure { iterations: opts.max_iter, residual: res })
    }
}

/// Solves a tridiagonal system in place (Thomas algorithm). `sub[0]` and
/// `sup[n-1]` are ignored.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        c[i] = sup[i - 1] / beta;
        beta = diag[i] - sub[i] * c[i];
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i + 1] * rhs[i + 1];
    }
}
